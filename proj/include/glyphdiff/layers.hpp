#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "glyphdiff/rng.hpp"
#include "glyphdiff/tape.hpp"

namespace glyphdiff {

template <typename S>
using ParamVisitor = std::function<void(ParamT<S>&)>;

template <typename S>
void init_he_normal(ParamT<S>& p, int fan_in, Rng& rng) {
    rng.fill_normal(p.value, std::sqrt(2.0 / (double)fan_in));
}

template <typename S>
struct Conv2dT {
    ParamT<S> w, b;
    int k = 3, cin = 0, cout = 0, stride = 1, pad = 1;

    void init(const std::string& name, int k_, int cin_, int cout_, int stride_, int pad_,
              Rng& rng, bool zero_init = false) {
        k = k_; cin = cin_; cout = cout_; stride = stride_; pad = pad_;
        w.name = name + ".w";
        b.name = name + ".b";
        w.value = TensorT<S>({k, k, cin, cout});
        b.value = TensorT<S>({cout});
        if (!zero_init) init_he_normal(w, k * k * cin, rng);
    }

    Var fwd(TapeT<S>& tp, Var x) {
        Var wv = tp.param(w), bv = tp.param(b);
        return op_conv2d(tp, x, wv, bv, stride, pad);
    }

    void visit(const ParamVisitor<S>& v) { v(w); v(b); }
};

template <typename S>
struct LinearT {
    ParamT<S> w, b;
    int din = 0, dout = 0;

    void init(const std::string& name, int din_, int dout_, Rng& rng, bool zero_init = false) {
        din = din_; dout = dout_;
        w.name = name + ".w";
        b.name = name + ".b";
        w.value = TensorT<S>({din, dout});
        b.value = TensorT<S>({dout});
        if (!zero_init) rng.fill_normal(w.value, std::sqrt(1.0 / (double)din));
    }

    Var fwd(TapeT<S>& tp, Var x) {
        Var wv = tp.param(w), bv = tp.param(b);
        return op_linear(tp, x, wv, bv);
    }

    void visit(const ParamVisitor<S>& v) { v(w); v(b); }
};

template <typename S>
struct GroupNormT {
    ParamT<S> gamma, beta;
    int groups = 8, channels = 0;

    void init(const std::string& name, int channels_, int groups_) {
        channels = channels_; groups = groups_;
        gamma.name = name + ".gamma";
        beta.name = name + ".beta";
        gamma.value = TensorT<S>::full({channels}, S(1));
        beta.value = TensorT<S>({channels});
    }

    Var fwd(TapeT<S>& tp, Var x) {
        Var gv = tp.param(gamma), bv = tp.param(beta);
        return op_group_norm(tp, x, gv, bv, groups);
    }

    void visit(const ParamVisitor<S>& v) { v(gamma); v(beta); }
};

// single-head cross attention from a spatial map to a token set, with
// residual connection: x + Wo(softmax(q k^T / sqrt(C)) v)
template <typename S>
struct CrossAttentionT {
    LinearT<S> to_q, to_k, to_v, to_out;
    GroupNormT<S> norm;
    int channels = 0, token_dim = 0;

    void init(const std::string& name, int channels_, int token_dim_, int groups, Rng& rng) {
        channels = channels_; token_dim = token_dim_;
        norm.init(name + ".norm", channels, groups);
        to_q.init(name + ".q", channels, channels, rng);
        to_k.init(name + ".k", token_dim, channels, rng);
        to_v.init(name + ".v", token_dim, channels, rng);
        to_out.init(name + ".out", channels, channels, rng);
    }

    Var fwd(TapeT<S>& tp, Var x, Var tokens) {
        const std::vector<int> xs = tp.val(x).shape;  // (N,H,W,C); copy: nodes may reallocate
        const int n = xs[0], hw = xs[1] * xs[2], c = xs[3];
        Var h = norm.fwd(tp, x);
        Var hq = op_reshape(tp, h, {n, hw, c});
        Var q = to_q.fwd(tp, hq);
        Var k = to_k.fwd(tp, tokens);
        Var v = to_v.fwd(tp, tokens);
        Var scores = op_scale(tp, op_bmm_nt(tp, q, k), (S)(1.0 / std::sqrt((double)c)));
        Var probs = op_softmax_rows(tp, scores);
        Var att = op_bmm_nn(tp, probs, v);
        Var out = to_out.fwd(tp, att);
        return op_add(tp, x, op_reshape(tp, out, xs));
    }

    void visit(const ParamVisitor<S>& v) {
        norm.visit(v); to_q.visit(v); to_k.visit(v); to_v.visit(v); to_out.visit(v);
    }
};

template <typename S>
struct ResBlockT {
    GroupNormT<S> gn1, gn2;
    Conv2dT<S> conv1, conv2, skip;
    LinearT<S> temb_proj;
    bool has_skip = false;

    void init(const std::string& name, int cin, int cout, int temb_dim, int groups, Rng& rng) {
        gn1.init(name + ".gn1", cin, groups);
        conv1.init(name + ".conv1", 3, cin, cout, 1, 1, rng);
        temb_proj.init(name + ".temb", temb_dim, cout, rng);
        gn2.init(name + ".gn2", cout, groups);
        conv2.init(name + ".conv2", 3, cout, cout, 1, 1, rng);
        has_skip = cin != cout;
        if (has_skip) skip.init(name + ".skip", 1, cin, cout, 1, 0, rng);
    }

    Var fwd(TapeT<S>& tp, Var x, Var temb) {
        Var h = gn1.fwd(tp, x);
        h = op_silu(tp, h);
        h = conv1.fwd(tp, h);
        Var e = temb_proj.fwd(tp, op_silu(tp, temb));
        h = op_add_rowvec(tp, h, e);
        h = gn2.fwd(tp, h);
        h = op_silu(tp, h);
        h = conv2.fwd(tp, h);
        Var xs = has_skip ? skip.fwd(tp, x) : x;
        return op_add(tp, xs, h);
    }

    void visit(const ParamVisitor<S>& v) {
        gn1.visit(v); conv1.visit(v); temb_proj.visit(v); gn2.visit(v); conv2.visit(v);
        if (has_skip) skip.visit(v);
    }
};

// sinusoidal timestep embedding, (N, dim)
template <typename S>
TensorT<S> sinusoidal_embedding(const std::vector<int>& ts, int dim) {
    const int half = dim / 2;
    TensorT<S> out({(int)ts.size(), dim});
    for (size_t i = 0; i < ts.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * (double)j / (double)half);
            const double a = (double)ts[i] * freq;
            out[(int64_t)i * dim + j] = (S)std::sin(a);
            out[(int64_t)i * dim + half + j] = (S)std::cos(a);
        }
    }
    return out;
}

}  // namespace glyphdiff
