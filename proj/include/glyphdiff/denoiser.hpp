#pragma once

#include <array>
#include <string>
#include <vector>

#include "glyphdiff/layers.hpp"

namespace glyphdiff {

// Toy U-Net denoiser: 3 resolutions, 2 residual blocks per level, sinusoidal
// timestep embedding, prompt cross-attention at the two coarsest levels.
// Injection sites: middle-block input plus each of the 6 decoder-block
// inputs (7 sites).
struct DenoiserConfig {
    int latent_hw = 32;
    int latent_c = 12;
    std::array<int, 3> widths = {16, 32, 64};
    int groups = 8;
    int token_dim = 64;
    int sin_dim = 64;
    int temb_dim = 128;
};

struct SiteSpec {
    int channels = 0;
    int hw = 0;
};

inline std::vector<SiteSpec> injection_sites(const DenoiserConfig& cfg) {
    const int hw = cfg.latent_hw;
    return {{cfg.widths[2], hw / 4}, {cfg.widths[2], hw / 4}, {cfg.widths[2], hw / 4},
            {cfg.widths[1], hw / 2}, {cfg.widths[1], hw / 2},
            {cfg.widths[0], hw},     {cfg.widths[0], hw}};
}

// Per-site residual feature maps (the injected information). Value type used
// at inference; during training the sites stay on the tape as Vars.
struct InjectionSet {
    std::vector<Tensor> sites;

    static InjectionSet zeros(const std::vector<SiteSpec>& specs, int n) {
        InjectionSet s;
        s.sites.reserve(specs.size());
        for (const auto& sp : specs) s.sites.emplace_back(Tensor({n, sp.hw, sp.hw, sp.channels}));
        return s;
    }

    void accumulate(const InjectionSet& o) {
        if (o.sites.size() != sites.size())
            throw std::invalid_argument("InjectionSet: site count mismatch");
        for (size_t i = 0; i < sites.size(); ++i) {
            check_same_shape(sites[i], o.sites[i], "InjectionSet::accumulate");
            for (int64_t j = 0; j < sites[i].numel(); ++j) sites[i][j] += o.sites[i][j];
        }
    }

    void scale(float s) {
        for (auto& t : sites)
            for (auto& v : t.data) v *= s;
    }
};

template <typename S>
struct UNetT {
    DenoiserConfig cfg;

    Conv2dT<S> conv_in;
    LinearT<S> temb1, temb2;

    // encoder
    ResBlockT<S> e00, e01, e10, e11, e20, e21;
    CrossAttentionT<S> ea10, ea11, ea20, ea21;
    Conv2dT<S> down0, down1;

    // middle
    ResBlockT<S> m1, m2;
    CrossAttentionT<S> ma;

    // decoder (coarse to fine) + upsample convs
    ResBlockT<S> d0, d1, d2, d3, d4, d5;
    CrossAttentionT<S> da0, da1, da2, da3;
    Conv2dT<S> up1, up0;

    GroupNormT<S> gn_out;
    Conv2dT<S> conv_out;

    void init(const std::string& p, const DenoiserConfig& c, Rng& rng) {
        cfg = c;
        const int w0 = c.widths[0], w1 = c.widths[1], w2 = c.widths[2];
        conv_in.init(p + ".conv_in", 3, c.latent_c, w0, 1, 1, rng);
        temb1.init(p + ".temb1", c.sin_dim, c.temb_dim, rng);
        temb2.init(p + ".temb2", c.temb_dim, c.temb_dim, rng);

        e00.init(p + ".e00", w0, w0, c.temb_dim, c.groups, rng);
        e01.init(p + ".e01", w0, w0, c.temb_dim, c.groups, rng);
        down0.init(p + ".down0", 3, w0, w1, 2, 1, rng);
        e10.init(p + ".e10", w1, w1, c.temb_dim, c.groups, rng);
        ea10.init(p + ".ea10", w1, c.token_dim, c.groups, rng);
        e11.init(p + ".e11", w1, w1, c.temb_dim, c.groups, rng);
        ea11.init(p + ".ea11", w1, c.token_dim, c.groups, rng);
        down1.init(p + ".down1", 3, w1, w2, 2, 1, rng);
        e20.init(p + ".e20", w2, w2, c.temb_dim, c.groups, rng);
        ea20.init(p + ".ea20", w2, c.token_dim, c.groups, rng);
        e21.init(p + ".e21", w2, w2, c.temb_dim, c.groups, rng);
        ea21.init(p + ".ea21", w2, c.token_dim, c.groups, rng);

        m1.init(p + ".m1", w2, w2, c.temb_dim, c.groups, rng);
        ma.init(p + ".ma", w2, c.token_dim, c.groups, rng);
        m2.init(p + ".m2", w2, w2, c.temb_dim, c.groups, rng);

        d0.init(p + ".d0", 2 * w2, w2, c.temb_dim, c.groups, rng);
        da0.init(p + ".da0", w2, c.token_dim, c.groups, rng);
        d1.init(p + ".d1", 2 * w2, w2, c.temb_dim, c.groups, rng);
        da1.init(p + ".da1", w2, c.token_dim, c.groups, rng);
        up1.init(p + ".up1", 3, w2, w1, 1, 1, rng);
        d2.init(p + ".d2", 2 * w1, w1, c.temb_dim, c.groups, rng);
        da2.init(p + ".da2", w1, c.token_dim, c.groups, rng);
        d3.init(p + ".d3", 2 * w1, w1, c.temb_dim, c.groups, rng);
        da3.init(p + ".da3", w1, c.token_dim, c.groups, rng);
        up0.init(p + ".up0", 3, w1, w0, 1, 1, rng);
        d4.init(p + ".d4", 2 * w0, w0, c.temb_dim, c.groups, rng);
        d5.init(p + ".d5", 2 * w0, w0, c.temb_dim, c.groups, rng);

        gn_out.init(p + ".gn_out", w0, c.groups);
        conv_out.init(p + ".conv_out", 3, w0, c.latent_c, 1, 1, rng, /*zero_init=*/true);
    }

    Var timestep_embedding(TapeT<S>& tp, const std::vector<int>& ts) {
        Var e = tp.leaf(sinusoidal_embedding<S>(ts, cfg.sin_dim));
        e = temb1.fwd(tp, e);
        e = op_silu(tp, e);
        return temb2.fwd(tp, e);
    }

    // encoder + middle trunk shared with the branch construction; returns the
    // per-block taps in order [e00, e01, e10, e11, e20, e21, mid_out] and the
    // skip stack. `mid_injection`, when provided, is added to the middle
    // block input.
    struct TrunkOut {
        std::vector<Var> taps;
        std::vector<Var> skips;
        Var h = -1;
    };

    TrunkOut trunk(TapeT<S>& tp, Var z, Var tokens, Var temb, Var mid_injection = -1) {
        TrunkOut out;
        Var h = conv_in.fwd(tp, z);
        h = e00.fwd(tp, h, temb);
        out.taps.push_back(h);
        out.skips.push_back(h);
        h = e01.fwd(tp, h, temb);
        out.taps.push_back(h);
        out.skips.push_back(h);
        h = down0.fwd(tp, h);
        h = ea10.fwd(tp, e10.fwd(tp, h, temb), tokens);
        out.taps.push_back(h);
        out.skips.push_back(h);
        h = ea11.fwd(tp, e11.fwd(tp, h, temb), tokens);
        out.taps.push_back(h);
        out.skips.push_back(h);
        h = down1.fwd(tp, h);
        h = ea20.fwd(tp, e20.fwd(tp, h, temb), tokens);
        out.taps.push_back(h);
        out.skips.push_back(h);
        h = ea21.fwd(tp, e21.fwd(tp, h, temb), tokens);
        out.taps.push_back(h);
        out.skips.push_back(h);

        if (mid_injection >= 0) h = op_add(tp, h, mid_injection);
        h = m1.fwd(tp, h, temb);
        h = ma.fwd(tp, h, tokens);
        h = m2.fwd(tp, h, temb);
        out.taps.push_back(h);
        out.h = h;
        return out;
    }

    // full denoiser forward; injections (when given) hold 7 Vars ordered
    // [middle, d0, d1, d2, d3, d4, d5]
    Var forward(TapeT<S>& tp, Var z, Var tokens, const std::vector<int>& ts,
                const std::vector<Var>* injections = nullptr) {
        if (injections && injections->size() != 7)
            throw std::invalid_argument("denoiser forward: expected 7 injection sites");
        const auto specs = injection_sites(cfg);
        if (injections) {
            const int n = tp.val(z).dim(0);
            for (size_t i = 0; i < specs.size(); ++i) {
                const auto& v = tp.val((*injections)[i]);
                if (v.dim(0) != n || v.dim(1) != specs[i].hw || v.dim(2) != specs[i].hw ||
                    v.dim(3) != specs[i].channels)
                    throw std::invalid_argument("injection shape mismatch at site " +
                                                std::to_string(i) + ": " + shape_str(v.shape));
            }
        }
        Var temb = timestep_embedding(tp, ts);
        TrunkOut enc = trunk(tp, z, tokens, temb, injections ? (*injections)[0] : -1);
        Var h = enc.h;
        auto& skips = enc.skips;

        auto inject = [&](int site) {
            if (injections) h = op_add(tp, h, (*injections)[(size_t)site]);
        };
        auto pop_skip = [&]() {
            Var s = skips.back();
            skips.pop_back();
            return s;
        };

        inject(1);
        h = da0.fwd(tp, d0.fwd(tp, op_concat_c(tp, h, pop_skip()), temb), tokens);
        inject(2);
        h = da1.fwd(tp, d1.fwd(tp, op_concat_c(tp, h, pop_skip()), temb), tokens);
        h = up1.fwd(tp, op_upsample_nearest2(tp, h));
        inject(3);
        h = da2.fwd(tp, d2.fwd(tp, op_concat_c(tp, h, pop_skip()), temb), tokens);
        inject(4);
        h = da3.fwd(tp, d3.fwd(tp, op_concat_c(tp, h, pop_skip()), temb), tokens);
        h = up0.fwd(tp, op_upsample_nearest2(tp, h));
        inject(5);
        h = d4.fwd(tp, op_concat_c(tp, h, pop_skip()), temb);
        inject(6);
        h = d5.fwd(tp, op_concat_c(tp, h, pop_skip()), temb);

        h = gn_out.fwd(tp, h);
        h = op_silu(tp, h);
        return conv_out.fwd(tp, h);
    }

    void visit(const ParamVisitor<S>& v) {
        conv_in.visit(v);
        temb1.visit(v); temb2.visit(v);
        e00.visit(v); e01.visit(v); down0.visit(v);
        e10.visit(v); ea10.visit(v); e11.visit(v); ea11.visit(v); down1.visit(v);
        e20.visit(v); ea20.visit(v); e21.visit(v); ea21.visit(v);
        m1.visit(v); ma.visit(v); m2.visit(v);
        d0.visit(v); da0.visit(v); d1.visit(v); da1.visit(v); up1.visit(v);
        d2.visit(v); da2.visit(v); d3.visit(v); da3.visit(v); up0.visit(v);
        d4.visit(v); d5.visit(v);
        gn_out.visit(v); conv_out.visit(v);
    }
};

using UNet = UNetT<float>;

}  // namespace glyphdiff
