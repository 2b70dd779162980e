#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glyphdiff/geometry.hpp"
#include "glyphdiff/parallel.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Trainable (or frozen) named weight. Gradients accumulate into `grad`
// across backward() calls until the optimizer consumes and clears them.
template <typename S>
struct ParamT {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
    bool trainable = true;

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = TensorT<S>(value.shape);
    }
};

using Param = ParamT<float>;

using Var = int;

// Reverse-mode tape. Ops evaluate eagerly, record a backward closure, and
// propagate requires_grad so frozen subgraphs pay no backward cost. The tape
// is rebuilt every step (define-by-run) and cleared with reset().
template <typename S>
class TapeT {
public:
    using T = TensorT<S>;

    struct Node {
        T value;
        T grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        ParamT<S>* bound = nullptr;
        std::function<void(TapeT&, Var)> backward;
    };

    bool grad_enabled = true;

    std::vector<Node> nodes;

    void reset() { nodes.clear(); }

    Var leaf(T v, bool requires_grad = false) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad && grad_enabled;
        nodes.push_back(std::move(n));
        return (Var)nodes.size() - 1;
    }

    Var param(ParamT<S>& p) {
        Node n;
        n.value = p.value;
        n.requires_grad = p.trainable && grad_enabled;
        n.bound = &p;
        nodes.push_back(std::move(n));
        return (Var)nodes.size() - 1;
    }

    T& val(Var id) { return nodes[(size_t)id].value; }
    const T& val(Var id) const { return nodes[(size_t)id].value; }
    bool needs_grad(Var id) const { return nodes[(size_t)id].requires_grad; }

    T& grad(Var id) {
        Node& n = nodes[(size_t)id];
        if (!n.grad_alloc) {
            n.grad = T(n.value.shape);
            n.grad_alloc = true;
        }
        return n.grad;
    }

    void backward(Var root) {
        Node& r = nodes[(size_t)root];
        if (r.value.numel() != 1) throw std::logic_error("backward root must be scalar");
        if (!r.requires_grad) throw std::logic_error("backward root does not require grad");
        grad(root)[0] = S(1);
        for (Var id = root; id >= 0; --id) {
            Node& n = nodes[(size_t)id];
            if (!n.requires_grad || !n.grad_alloc) continue;
            if (n.backward) n.backward(*this, id);
            if (n.bound && n.bound->trainable) {
                n.bound->ensure_grad();
                auto& g = n.bound->grad;
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
            }
        }
    }

    // --- helpers -----------------------------------------------------------

    Var make(T value, bool requires_grad, std::function<void(TapeT&, Var)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad && grad_enabled;
        if (n.requires_grad) n.backward = std::move(bw);
        nodes.push_back(std::move(n));
        return (Var)nodes.size() - 1;
    }
};

using Tape = TapeT<float>;

namespace detail {
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapRM = Eigen::Map<const RowMat<S>>;

// C (m x n) = A (m x k) . B (k x n), all row-major; rows of C are split
// across workers, each entry accumulated sequentially over k.
template <typename S>
void gemm(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
    CMapRM<S> Bm(B, k, n);
    parallel_for(m, [&](int64_t r0, int64_t r1) {
        CMapRM<S> Am(A + r0 * k, r1 - r0, k);
        MapRM<S> Cm(C + r0 * n, r1 - r0, n);
        Cm.noalias() = Am * Bm;
    });
}

// C (m x n) += A^T (m x k_rows... A is (p x m)) . B (p x n)
template <typename S>
void gemm_tn_acc(const S* A, const S* B, S* C, int64_t p, int64_t m, int64_t n) {
    CMapRM<S> Am(A, p, m);
    CMapRM<S> Bm(B, p, n);
    parallel_for(m, [&](int64_t r0, int64_t r1) {
        MapRM<S> Cm(C + r0 * n, r1 - r0, n);
        Cm.noalias() += Am.middleCols(r0, r1 - r0).transpose() * Bm;
    });
}

// C (m x n) = A (m x k) . B^T (B is (n x k))
template <typename S>
void gemm_nt(const S* A, const S* B, S* C, int64_t m, int64_t k, int64_t n) {
    CMapRM<S> Bm(B, n, k);
    parallel_for(m, [&](int64_t r0, int64_t r1) {
        CMapRM<S> Am(A + r0 * k, r1 - r0, k);
        MapRM<S> Cm(C + r0 * n, r1 - r0, n);
        Cm.noalias() = Am * Bm.transpose();
    });
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var op_add(TapeT<S>& tp, Var a, Var b) {
    check_same_shape(tp.val(a), tp.val(b), "add");
    TensorT<S> out = tp.val(a);
    const auto& vb = tp.val(b);
    parallel_for(out.numel(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) out[i] += vb[i];
    });
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [a, b](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
}

template <typename S>
Var op_add_scaled(TapeT<S>& tp, Var a, Var b, S alpha) {
    check_same_shape(tp.val(a), tp.val(b), "add_scaled");
    TensorT<S> out = tp.val(a);
    const auto& vb = tp.val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += alpha * vb[i];
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [a, b, alpha](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += alpha * g[i];
        }
    });
}

template <typename S>
Var op_scale(TapeT<S>& tp, Var a, S s) {
    TensorT<S> out = tp.val(a);
    for (auto& v : out.data) v *= s;
    return tp.make(std::move(out), tp.needs_grad(a), [a, s](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& ga = t.grad(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
    });
}

template <typename S>
Var op_silu(TapeT<S>& tp, Var a) {
    TensorT<S> out(tp.val(a).shape);
    const auto& x = tp.val(a);
    parallel_for(out.numel(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const S sg = S(1) / (S(1) + std::exp(-x[i]));
            out[i] = x[i] * sg;
        }
    });
    return tp.make(std::move(out), tp.needs_grad(a), [a](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        const auto& x = t.val(a);
        auto& ga = t.grad(a);
        parallel_for(g.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
                const S sg = S(1) / (S(1) + std::exp(-x[i]));
                ga[i] += g[i] * sg * (S(1) + x[i] * (S(1) - sg));
            }
        });
    });
}

// ---------------------------------------------------------------------------
// conv2d, channels-last (N,H,W,C); weight (k,k,Cin,Cout); bias (Cout)
// ---------------------------------------------------------------------------

namespace detail {
template <typename S>
void im2col(const TensorT<S>& x, int k, int stride, int pad, int oh, int ow, std::vector<S>& col) {
    const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t row_len = (int64_t)k * k * c;
    col.assign((int64_t)n * oh * ow * row_len, S(0));
    parallel_for((int64_t)n * oh * ow, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const int ox = (int)(p % ow);
            const int oy = (int)((p / ow) % oh);
            const int ni = (int)(p / ((int64_t)ow * oh));
            S* dst = col.data() + p * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    S* d = dst + ((int64_t)ky * k + kx) * c;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        const S* src = x.ptr() + (((int64_t)ni * h + iy) * w + ix) * c;
                        std::memcpy(d, src, sizeof(S) * (size_t)c);
                    }
                }
            }
        }
    });
}
}  // namespace detail

template <typename S>
Var op_conv2d(TapeT<S>& tp, Var x, Var w, Var b, int stride, int pad) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    const auto& bv = tp.val(b);
    if (xv.shape.size() != 4 || wv.shape.size() != 4)
        throw std::invalid_argument("conv2d expects (N,H,W,C) input and (k,k,Cin,Cout) weight");
    const int n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), cin = xv.dim(3);
    const int k = wv.dim(0), cout = wv.dim(3);
    if (wv.dim(1) != k || wv.dim(2) != cin)
        throw std::invalid_argument("conv2d weight shape mismatch: " + shape_str(wv.shape) +
                                    " for input " + shape_str(xv.shape));
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wd + 2 * pad - k) / stride + 1;
    const int64_t rows = (int64_t)n * oh * ow;
    const int64_t rlen = (int64_t)k * k * cin;

    std::vector<S> col;
    detail::im2col(xv, k, stride, pad, oh, ow, col);
    TensorT<S> out({n, oh, ow, cout});
    detail::gemm(col.data(), wv.ptr(), out.ptr(), rows, rlen, cout);
    parallel_for(rows, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            S* o = out.ptr() + p * cout;
            for (int c = 0; c < cout; ++c) o[c] += bv[c];
        }
    });

    bool rg = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [x, w, b, stride, pad, oh, ow](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        const auto& xv = t.val(x);
        const auto& wv = t.val(w);
        const int n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), cin = xv.dim(3);
        const int k = wv.dim(0), cout = wv.dim(3);
        const int64_t rows = (int64_t)n * oh * ow;
        const int64_t rlen = (int64_t)k * k * cin;

        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t p = 0; p < rows; ++p) {
                const S* gp = g.ptr() + p * cout;
                for (int c = 0; c < cout; ++c) gb[c] += gp[c];
            }
        }
        if (t.needs_grad(w)) {
            std::vector<S> col;
            detail::im2col(xv, k, stride, pad, oh, ow, col);
            detail::gemm_tn_acc(col.data(), g.ptr(), t.grad(w).ptr(), rows, rlen, cout);
        }
        if (t.needs_grad(x)) {
            // dcol = g . W^T, then gather per input pixel (no write races)
            std::vector<S> dcol((size_t)(rows * rlen));
            detail::gemm_nt(g.ptr(), wv.ptr(), dcol.data(), rows, cout, rlen);
            auto& gx = t.grad(x);
            parallel_for((int64_t)n * h * wd, [&](int64_t q0, int64_t q1) {
                for (int64_t q = q0; q < q1; ++q) {
                    const int ix = (int)(q % wd);
                    const int iy = (int)((q / wd) % h);
                    const int ni = (int)(q / ((int64_t)wd * h));
                    S* gxp = gx.ptr() + q * cin;
                    for (int ky = 0; ky < k; ++ky) {
                        const int ty = iy + pad - ky;
                        if (ty < 0 || ty % stride) continue;
                        const int oy = ty / stride;
                        if (oy >= oh) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int tx = ix + pad - kx;
                            if (tx < 0 || tx % stride) continue;
                            const int ox = tx / stride;
                            if (ox >= ow) continue;
                            const S* src = dcol.data() +
                                           ((((int64_t)ni * oh + oy) * ow + ox) * rlen) +
                                           ((int64_t)ky * k + kx) * cin;
                            for (int c = 0; c < cin; ++c) gxp[c] += src[c];
                        }
                    }
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// linear: x (..., Din) . w (Din, Dout) + b (Dout)
// ---------------------------------------------------------------------------

template <typename S>
Var op_linear(TapeT<S>& tp, Var x, Var w, Var b) {
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    const auto& bv = tp.val(b);
    const int din = wv.dim(0), dout = wv.dim(1);
    if (xv.dim((int)xv.shape.size() - 1) != din)
        throw std::invalid_argument("linear: input last dim " + shape_str(xv.shape) +
                                    " does not match weight " + shape_str(wv.shape));
    const int64_t rows = xv.numel() / din;
    std::vector<int> oshape = xv.shape;
    oshape.back() = dout;
    TensorT<S> out(oshape);
    detail::gemm(xv.ptr(), wv.ptr(), out.ptr(), rows, din, dout);
    for (int64_t p = 0; p < rows; ++p) {
        S* o = out.ptr() + p * dout;
        for (int c = 0; c < dout; ++c) o[c] += bv[c];
    }
    bool rg = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [x, w, b, rows, din, dout](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t p = 0; p < rows; ++p)
                for (int c = 0; c < dout; ++c) gb[c] += g[p * dout + c];
        }
        if (t.needs_grad(w))
            detail::gemm_tn_acc(t.val(x).ptr(), g.ptr(), t.grad(w).ptr(), rows, din, dout);
        if (t.needs_grad(x)) {
            std::vector<S> dx((size_t)(rows * din));
            detail::gemm_nt(g.ptr(), t.val(w).ptr(), dx.data(), rows, dout, din);
            auto& gx = t.grad(x);
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += dx[(size_t)i];
        }
    });
}

// ---------------------------------------------------------------------------
// group norm over (H,W,C/G) per (n,g); gamma/beta shape (C)
// ---------------------------------------------------------------------------

template <typename S>
Var op_group_norm(TapeT<S>& tp, Var x, Var gamma, Var beta, int groups, S eps = S(1e-5)) {
    const auto& xv = tp.val(x);
    const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    if (c % groups) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int cg = c / groups;
    const int64_t m = (int64_t)h * w * cg;
    const auto& gv = tp.val(gamma);
    const auto& bv = tp.val(beta);

    TensorT<S> out(xv.shape);
    TensorT<S> mean({n, groups}), inv_std({n, groups});
    parallel_for((int64_t)n * groups, [&](int64_t j0, int64_t j1) {
        for (int64_t j = j0; j < j1; ++j) {
            const int ni = (int)(j / groups), gi = (int)(j % groups);
            const int c0 = gi * cg;
            double sum = 0.0, sumsq = 0.0;
            for (int64_t p = 0; p < (int64_t)h * w; ++p) {
                const S* xp = xv.ptr() + ((int64_t)ni * h * w + p) * c + c0;
                for (int q = 0; q < cg; ++q) {
                    sum += xp[q];
                    sumsq += (double)xp[q] * xp[q];
                }
            }
            const double mu = sum / (double)m;
            const double var = sumsq / (double)m - mu * mu;
            const S istd = (S)(1.0 / std::sqrt(var + (double)eps));
            mean[j] = (S)mu;
            inv_std[j] = istd;
            for (int64_t p = 0; p < (int64_t)h * w; ++p) {
                const S* xp = xv.ptr() + ((int64_t)ni * h * w + p) * c + c0;
                S* op = out.ptr() + ((int64_t)ni * h * w + p) * c + c0;
                for (int q = 0; q < cg; ++q)
                    op[q] = (xp[q] - (S)mu) * istd * gv[c0 + q] + bv[c0 + q];
            }
        }
    });

    bool rg = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
    return tp.make(std::move(out), rg,
                   [x, gamma, beta, groups, mean, inv_std](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        const auto& xv = t.val(x);
        const auto& gv = t.val(gamma);
        const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
        const int cg = c / groups;
        const int64_t m = (int64_t)h * w * cg;

        if (t.needs_grad(gamma) || t.needs_grad(beta)) {
            auto& ggamma = t.grad(gamma);
            auto& gbeta = t.grad(beta);
            for (int ni = 0; ni < n; ++ni) {
                for (int64_t p = 0; p < (int64_t)h * w; ++p) {
                    const int64_t base = ((int64_t)ni * h * w + p) * c;
                    for (int ch = 0; ch < c; ++ch) {
                        const int gi = ch / cg;
                        const S xhat =
                            (xv[base + ch] - mean[(int64_t)ni * groups + gi]) *
                            inv_std[(int64_t)ni * groups + gi];
                        if (t.needs_grad(gamma)) ggamma[ch] += g[base + ch] * xhat;
                        if (t.needs_grad(beta)) gbeta[ch] += g[base + ch];
                    }
                }
            }
        }
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            parallel_for((int64_t)n * groups, [&](int64_t j0, int64_t j1) {
                for (int64_t j = j0; j < j1; ++j) {
                    const int ni = (int)(j / groups), gi = (int)(j % groups);
                    const int c0 = gi * cg;
                    const S mu = mean[j], istd = inv_std[j];
                    double s1 = 0.0, s2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
                    for (int64_t p = 0; p < (int64_t)h * w; ++p) {
                        const int64_t base = ((int64_t)ni * h * w + p) * c + c0;
                        for (int q = 0; q < cg; ++q) {
                            const S dxhat = g[base + q] * gv[c0 + q];
                            const S xhat = (xv[base + q] - mu) * istd;
                            s1 += dxhat;
                            s2 += (double)dxhat * xhat;
                        }
                    }
                    const S m1 = (S)(s1 / (double)m), m2 = (S)(s2 / (double)m);
                    for (int64_t p = 0; p < (int64_t)h * w; ++p) {
                        const int64_t base = ((int64_t)ni * h * w + p) * c + c0;
                        for (int q = 0; q < cg; ++q) {
                            const S dxhat = g[base + q] * gv[c0 + q];
                            const S xhat = (xv[base + q] - mu) * istd;
                            gx[base + q] += istd * (dxhat - m1 - xhat * m2);
                        }
                    }
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x upsample
// ---------------------------------------------------------------------------

template <typename S>
Var op_upsample_nearest2(TapeT<S>& tp, Var x) {
    const auto& xv = tp.val(x);
    const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    TensorT<S> out({n, 2 * h, 2 * w, c});
    parallel_for((int64_t)n * 2 * h, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            const int oy = (int)(r % (2 * h));
            const int ni = (int)(r / (2 * h));
            for (int ox = 0; ox < 2 * w; ++ox) {
                const S* src = xv.ptr() + (((int64_t)ni * h + oy / 2) * w + ox / 2) * c;
                S* dst = out.ptr() + (((int64_t)ni * 2 * h + oy) * 2 * w + ox) * c;
                std::memcpy(dst, src, sizeof(S) * (size_t)c);
            }
        }
    });
    return tp.make(std::move(out), tp.needs_grad(x), [x, n, h, w, c](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& gx = t.grad(x);
        parallel_for((int64_t)n * h, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                const int iy = (int)(r % h);
                const int ni = (int)(r / h);
                for (int ix = 0; ix < w; ++ix) {
                    S* dst = gx.ptr() + (((int64_t)ni * h + iy) * w + ix) * c;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const S* src = g.ptr() +
                                           (((int64_t)ni * 2 * h + 2 * iy + dy) * 2 * w + 2 * ix + dx) * c;
                            for (int q = 0; q < c; ++q) dst[q] += src[q];
                        }
                }
            }
        });
    });
}

// ---------------------------------------------------------------------------
// channel concat
// ---------------------------------------------------------------------------

template <typename S>
Var op_concat_c(TapeT<S>& tp, Var a, Var b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    const int n = av.dim(0), h = av.dim(1), w = av.dim(2), ca = av.dim(3), cb = bv.dim(3);
    if (bv.dim(0) != n || bv.dim(1) != h || bv.dim(2) != w)
        throw std::invalid_argument("concat_c: spatial shape mismatch");
    TensorT<S> out({n, h, w, ca + cb});
    const int64_t pix = (int64_t)n * h * w;
    parallel_for(pix, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            std::memcpy(out.ptr() + p * (ca + cb), av.ptr() + p * ca, sizeof(S) * (size_t)ca);
            std::memcpy(out.ptr() + p * (ca + cb) + ca, bv.ptr() + p * cb, sizeof(S) * (size_t)cb);
        }
    });
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [a, b, pix, ca, cb](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        if (t.needs_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t p = 0; p < pix; ++p)
                for (int q = 0; q < ca; ++q) ga[p * ca + q] += g[p * (ca + cb) + q];
        }
        if (t.needs_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t p = 0; p < pix; ++p)
                for (int q = 0; q < cb; ++q) gb[p * cb + q] += g[p * (ca + cb) + ca + q];
        }
    });
}

// ---------------------------------------------------------------------------
// batched matmul for attention: a (N,P,D) x b (N,K,D)^T -> (N,P,K)
// and (N,P,K) x (N,K,D) -> (N,P,D)
// ---------------------------------------------------------------------------

template <typename S>
Var op_bmm_nt(TapeT<S>& tp, Var a, Var b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    const int n = av.dim(0), p = av.dim(1), d = av.dim(2), k = bv.dim(1);
    if (bv.dim(0) != n || bv.dim(2) != d) throw std::invalid_argument("bmm_nt shape mismatch");
    TensorT<S> out({n, p, k});
    parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t ni = n0; ni < n1; ++ni) {
            detail::CMapRM<S> Am(av.ptr() + ni * p * d, p, d);
            detail::CMapRM<S> Bm(bv.ptr() + ni * k * d, k, d);
            detail::MapRM<S> Cm(out.ptr() + ni * p * k, p, k);
            Cm.noalias() = Am * Bm.transpose();
        }
    });
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [a, b, n, p, d, k](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        for (int64_t ni = 0; ni < n; ++ni) {
            detail::CMapRM<S> Gm(g.ptr() + ni * p * k, p, k);
            if (t.needs_grad(a)) {
                detail::CMapRM<S> Bm(t.val(b).ptr() + ni * k * d, k, d);
                detail::MapRM<S> Ga(t.grad(a).ptr() + ni * p * d, p, d);
                Ga.noalias() += Gm * Bm;
            }
            if (t.needs_grad(b)) {
                detail::CMapRM<S> Am(t.val(a).ptr() + ni * p * d, p, d);
                detail::MapRM<S> Gb(t.grad(b).ptr() + ni * k * d, k, d);
                Gb.noalias() += Gm.transpose() * Am;
            }
        }
    });
}

template <typename S>
Var op_bmm_nn(TapeT<S>& tp, Var a, Var b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    const int n = av.dim(0), p = av.dim(1), k = av.dim(2), d = bv.dim(2);
    if (bv.dim(0) != n || bv.dim(1) != k) throw std::invalid_argument("bmm_nn shape mismatch");
    TensorT<S> out({n, p, d});
    parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t ni = n0; ni < n1; ++ni) {
            detail::CMapRM<S> Am(av.ptr() + ni * p * k, p, k);
            detail::CMapRM<S> Bm(bv.ptr() + ni * k * d, k, d);
            detail::MapRM<S> Cm(out.ptr() + ni * p * d, p, d);
            Cm.noalias() = Am * Bm;
        }
    });
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg, [a, b, n, p, k, d](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        for (int64_t ni = 0; ni < n; ++ni) {
            detail::CMapRM<S> Gm(g.ptr() + ni * p * d, p, d);
            if (t.needs_grad(a)) {
                detail::CMapRM<S> Bm(t.val(b).ptr() + ni * k * d, k, d);
                detail::MapRM<S> Ga(t.grad(a).ptr() + ni * p * k, p, k);
                Ga.noalias() += Gm * Bm.transpose();
            }
            if (t.needs_grad(b)) {
                detail::CMapRM<S> Am(t.val(a).ptr() + ni * p * k, p, k);
                detail::MapRM<S> Gb(t.grad(b).ptr() + ni * k * d, k, d);
                Gb.noalias() += Am.transpose() * Gm;
            }
        }
    });
}

template <typename S>
Var op_softmax_rows(TapeT<S>& tp, Var x) {
    const auto& xv = tp.val(x);
    const int rowlen = xv.dim((int)xv.shape.size() - 1);
    const int64_t rows = xv.numel() / rowlen;
    TensorT<S> out(xv.shape);
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            const S* xp = xv.ptr() + r * rowlen;
            S* op = out.ptr() + r * rowlen;
            S mx = xp[0];
            for (int i = 1; i < rowlen; ++i) mx = std::max(mx, xp[i]);
            S sum = 0;
            for (int i = 0; i < rowlen; ++i) {
                op[i] = std::exp(xp[i] - mx);
                sum += op[i];
            }
            const S inv = S(1) / sum;
            for (int i = 0; i < rowlen; ++i) op[i] *= inv;
        }
    });
    return tp.make(std::move(out), tp.needs_grad(x), [x, rows, rowlen](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        const auto& y = t.val(id);
        auto& gx = t.grad(x);
        parallel_for(rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                const S* gp = g.ptr() + r * rowlen;
                const S* yp = y.ptr() + r * rowlen;
                S dot = 0;
                for (int i = 0; i < rowlen; ++i) dot += gp[i] * yp[i];
                S* gxp = gx.ptr() + r * rowlen;
                for (int i = 0; i < rowlen; ++i) gxp[i] += yp[i] * (gp[i] - dot);
            }
        });
    });
}

// ---------------------------------------------------------------------------
// token table ops
// ---------------------------------------------------------------------------

// table (V,K,D); one index per batch row -> (N,K,D)
template <typename S>
Var op_embed_rows(TapeT<S>& tp, Var table, std::vector<int> idx) {
    const auto& tv = tp.val(table);
    const int v = tv.dim(0), k = tv.dim(1), d = tv.dim(2);
    const int n = (int)idx.size();
    for (int i : idx)
        if (i < 0 || i >= v) throw std::out_of_range("embed_rows: index " + std::to_string(i) +
                                                     " out of vocabulary size " + std::to_string(v));
    TensorT<S> out({n, k, d});
    const int64_t block = (int64_t)k * d;
    for (int i = 0; i < n; ++i)
        std::memcpy(out.ptr() + i * block, tv.ptr() + (int64_t)idx[(size_t)i] * block,
                    sizeof(S) * (size_t)block);
    return tp.make(std::move(out), tp.needs_grad(table),
                   [table, idx = std::move(idx), block](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& gt = t.grad(table);
        for (size_t i = 0; i < idx.size(); ++i) {
            const S* src = g.ptr() + (int64_t)i * block;
            S* dst = gt.ptr() + (int64_t)idx[i] * block;
            for (int64_t q = 0; q < block; ++q) dst[q] += src[q];
        }
    });
}

// block (K,D) -> (N,K,D)
template <typename S>
Var op_broadcast_rows(TapeT<S>& tp, Var block, int n) {
    const auto& bv = tp.val(block);
    const int k = bv.dim(0), d = bv.dim(1);
    TensorT<S> out({n, k, d});
    const int64_t sz = (int64_t)k * d;
    for (int i = 0; i < n; ++i) std::memcpy(out.ptr() + i * sz, bv.ptr(), sizeof(S) * (size_t)sz);
    return tp.make(std::move(out), tp.needs_grad(block), [block, n, sz](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& gb = t.grad(block);
        for (int i = 0; i < n; ++i)
            for (int64_t q = 0; q < sz; ++q) gb[q] += g[(int64_t)i * sz + q];
    });
}

// select per-sample token blocks from two sources: out[i] = cond[i] ? a[i] : b[i]
template <typename S>
Var op_select_rows(TapeT<S>& tp, Var a, Var b, std::vector<uint8_t> take_a) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    check_same_shape(av, bv, "select_rows");
    const int n = av.dim(0);
    if ((int)take_a.size() != n) throw std::invalid_argument("select_rows: mask size mismatch");
    const int64_t block = av.numel() / n;
    TensorT<S> out(av.shape);
    for (int i = 0; i < n; ++i)
        std::memcpy(out.ptr() + i * block, (take_a[(size_t)i] ? av.ptr() : bv.ptr()) + i * block,
                    sizeof(S) * (size_t)block);
    bool rg = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.make(std::move(out), rg,
                   [a, b, take_a = std::move(take_a), n, block](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        for (int i = 0; i < n; ++i) {
            const Var src = take_a[(size_t)i] ? a : b;
            if (!t.needs_grad(src)) continue;
            auto& gs = t.grad(src);
            for (int64_t q = 0; q < block; ++q) gs[i * block + q] += g[i * block + q];
        }
    });
}

// ---------------------------------------------------------------------------
// crop + bilinear up-sample (half-pixel centers). Input must not require
// grad: in this artifact the op is only ever applied to the noisy latent.
// ---------------------------------------------------------------------------

template <typename S>
Var op_crop_bilinear_up(TapeT<S>& tp, Var x, const std::vector<RectI>& rects, int oh, int ow) {
    const auto& xv = tp.val(x);
    if (tp.needs_grad(x))
        throw std::logic_error("crop_bilinear_up has no backward path; input must be grad-free");
    const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    if ((int)rects.size() != n) throw std::invalid_argument("crop_bilinear_up: one rect per sample");
    TensorT<S> out({n, oh, ow, c});
    for (int ni = 0; ni < n; ++ni) {
        const RectI& r = rects[(size_t)ni];
        if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h)
            throw std::invalid_argument("crop_bilinear_up: rect outside grid or empty");
        const int rh = r.height(), rw = r.width();
        if (rh == oh && rw == ow) {  // scale factor 1: plain sub-grid copy
            parallel_for(oh, [&](int64_t y0, int64_t y1) {
                for (int64_t oy = y0; oy < y1; ++oy)
                    std::memcpy(out.ptr() + (((int64_t)ni * oh + oy) * ow) * c,
                                xv.ptr() + (((int64_t)ni * h + r.y0 + oy) * w + r.x0) * c,
                                sizeof(S) * (size_t)rw * c);
            });
            continue;
        }
        const double sy = (double)rh / oh, sx = (double)rw / ow;
        parallel_for(oh, [&](int64_t y0, int64_t y1) {
            for (int64_t oy = y0; oy < y1; ++oy) {
                double fy = ((double)oy + 0.5) * sy - 0.5;
                fy = std::min(std::max(fy, 0.0), (double)rh - 1.0);
                const int iy0 = (int)fy;
                const int iy1 = std::min(iy0 + 1, rh - 1);
                const S wy = (S)(fy - iy0);
                for (int ox = 0; ox < ow; ++ox) {
                    double fx = ((double)ox + 0.5) * sx - 0.5;
                    fx = std::min(std::max(fx, 0.0), (double)rw - 1.0);
                    const int ix0 = (int)fx;
                    const int ix1 = std::min(ix0 + 1, rw - 1);
                    const S wx = (S)(fx - ix0);
                    const S* p00 = xv.ptr() + (((int64_t)ni * h + r.y0 + iy0) * w + r.x0 + ix0) * c;
                    const S* p01 = xv.ptr() + (((int64_t)ni * h + r.y0 + iy0) * w + r.x0 + ix1) * c;
                    const S* p10 = xv.ptr() + (((int64_t)ni * h + r.y0 + iy1) * w + r.x0 + ix0) * c;
                    const S* p11 = xv.ptr() + (((int64_t)ni * h + r.y0 + iy1) * w + r.x0 + ix1) * c;
                    S* o = out.ptr() + (((int64_t)ni * oh + oy) * ow + ox) * c;
                    for (int q = 0; q < c; ++q) {
                        const S top = p00[q] + wx * (p01[q] - p00[q]);
                        const S bot = p10[q] + wx * (p11[q] - p10[q]);
                        o[q] = top + wy * (bot - top);
                    }
                }
            }
        });
    }
    return tp.make(std::move(out), false, nullptr);
}

// ---------------------------------------------------------------------------
// relocation: area-average pool the full grid down to each sample's target
// rect size, paste into a zero canvas at the rect position.
// ---------------------------------------------------------------------------

template <typename S>
Var op_relocate(TapeT<S>& tp, Var x, const std::vector<RectI>& rects) {
    const auto& xv = tp.val(x);
    const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    if ((int)rects.size() != n) throw std::invalid_argument("relocate: one rect per sample");
    for (const RectI& r : rects)
        if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h)
            throw std::invalid_argument("relocate: target rect outside grid or empty");
    TensorT<S> out({n, h, w, c});
    parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t ni = n0; ni < n1; ++ni) {
            const RectI& r = rects[(size_t)ni];
            const int rh = r.height(), rw = r.width();
            if (rh == h && rw == w) {
                std::memcpy(out.ptr() + ni * (int64_t)h * w * c, xv.ptr() + ni * (int64_t)h * w * c,
                            sizeof(S) * (size_t)h * w * c);
                continue;
            }
            const double by = (double)h / rh, bx = (double)w / rw;
            const double inv_area = 1.0 / (by * bx);
            for (int i = 0; i < rh; ++i) {
                const double ylo = i * by, yhi = (i + 1) * by;
                const int iy0 = (int)ylo, iy1 = std::min((int)std::ceil(yhi), h);
                for (int j = 0; j < rw; ++j) {
                    const double xlo = j * bx, xhi = (j + 1) * bx;
                    const int ix0 = (int)xlo, ix1 = std::min((int)std::ceil(xhi), w);
                    S* o = out.ptr() + (((int64_t)ni * h + r.y0 + i) * w + r.x0 + j) * c;
                    for (int iy = iy0; iy < iy1; ++iy) {
                        const double wy = std::min((double)iy + 1.0, yhi) - std::max((double)iy, ylo);
                        for (int ix = ix0; ix < ix1; ++ix) {
                            const double wx =
                                std::min((double)ix + 1.0, xhi) - std::max((double)ix, xlo);
                            const S wgt = (S)(wy * wx * inv_area);
                            const S* src = xv.ptr() + (((int64_t)ni * h + iy) * w + ix) * c;
                            for (int q = 0; q < c; ++q) o[q] += wgt * src[q];
                        }
                    }
                }
            }
        }
    });
    return tp.make(std::move(out), tp.needs_grad(x), [x, rects, h, w, c](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& gx = t.grad(x);
        const int n = (int)rects.size();
        parallel_for(n, [&](int64_t n0, int64_t n1) {
            for (int64_t ni = n0; ni < n1; ++ni) {
                const RectI& r = rects[(size_t)ni];
                const int rh = r.height(), rw = r.width();
                if (rh == h && rw == w) {
                    const S* gp = g.ptr() + ni * (int64_t)h * w * c;
                    S* gxp = gx.ptr() + ni * (int64_t)h * w * c;
                    for (int64_t q = 0; q < (int64_t)h * w * c; ++q) gxp[q] += gp[q];
                    continue;
                }
                const double by = (double)h / rh, bx = (double)w / rw;
                const double inv_area = 1.0 / (by * bx);
                for (int i = 0; i < rh; ++i) {
                    const double ylo = i * by, yhi = (i + 1) * by;
                    const int iy0 = (int)ylo, iy1 = std::min((int)std::ceil(yhi), h);
                    for (int j = 0; j < rw; ++j) {
                        const double xlo = j * bx, xhi = (j + 1) * bx;
                        const int ix0 = (int)xlo, ix1 = std::min((int)std::ceil(xhi), w);
                        const S* go = g.ptr() + (((int64_t)ni * h + r.y0 + i) * w + r.x0 + j) * c;
                        for (int iy = iy0; iy < iy1; ++iy) {
                            const double wy =
                                std::min((double)iy + 1.0, yhi) - std::max((double)iy, ylo);
                            for (int ix = ix0; ix < ix1; ++ix) {
                                const double wx =
                                    std::min((double)ix + 1.0, xhi) - std::max((double)ix, xlo);
                                const S wgt = (S)(wy * wx * inv_area);
                                S* dst = gx.ptr() + (((int64_t)ni * h + iy) * w + ix) * c;
                                for (int q = 0; q < c; ++q) dst[q] += wgt * go[q];
                            }
                        }
                    }
                }
            }
        });
    });
}

// layout-preserving reshape (channels-last keeps (N,H,W,C) flat equal to (N,HW,C))
template <typename S>
Var op_reshape(TapeT<S>& tp, Var x, std::vector<int> shape) {
    const auto& xv = tp.val(x);
    if (shape_numel(shape) != xv.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(xv.shape) + " -> " +
                                    shape_str(shape));
    TensorT<S> out(std::move(shape), xv.data);
    return tp.make(std::move(out), tp.needs_grad(x), [x](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

// x (N,H,W,C) + e (N,C) broadcast over spatial dims
template <typename S>
Var op_add_rowvec(TapeT<S>& tp, Var x, Var e) {
    const auto& xv = tp.val(x);
    const auto& ev = tp.val(e);
    const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    if (ev.dim(0) != n || ev.dim(1) != c)
        throw std::invalid_argument("add_rowvec: expected (N,C) vector matching (N,H,W,C) input");
    TensorT<S> out = xv;
    parallel_for((int64_t)n * h * w, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const int ni = (int)(p / ((int64_t)h * w));
            S* o = out.ptr() + p * c;
            const S* ep = ev.ptr() + (int64_t)ni * c;
            for (int q = 0; q < c; ++q) o[q] += ep[q];
        }
    });
    bool rg = tp.needs_grad(x) || tp.needs_grad(e);
    return tp.make(std::move(out), rg, [x, e, n, h, w, c](TapeT<S>& t, Var id) {
        const auto& g = t.grad(id);
        if (t.needs_grad(x)) {
            auto& gx = t.grad(x);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (t.needs_grad(e)) {
            auto& ge = t.grad(e);
            for (int64_t p = 0; p < (int64_t)n * h * w; ++p) {
                const int ni = (int)(p / ((int64_t)h * w));
                for (int q = 0; q < c; ++q) ge[(int64_t)ni * c + q] += g[p * c + q];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// scalar readouts
// ---------------------------------------------------------------------------

template <typename S>
Var op_sq_err_mean(TapeT<S>& tp, Var pred, const TensorT<S>& target) {
    const auto& pv = tp.val(pred);
    check_same_shape(pv, target, "sq_err_mean");
    double acc = 0.0;
    for (int64_t i = 0; i < pv.numel(); ++i) {
        const double d = (double)pv[i] - (double)target[i];
        acc += d * d;
    }
    const int64_t m = pv.numel();
    TensorT<S> out = TensorT<S>::scalar((S)(acc / (double)m));
    return tp.make(std::move(out), tp.needs_grad(pred), [pred, target, m](TapeT<S>& t, Var id) {
        const S g = t.grad(id)[0];
        const auto& pv = t.val(pred);
        auto& gp = t.grad(pred);
        const S coef = g * S(2) / (S)m;
        for (int64_t i = 0; i < m; ++i) gp[i] += coef * (pv[i] - target[i]);
    });
}

// mask (N,H,W,1) broadcast over channels; mean over mask-selected entries.
// Empty mask yields 0 by definition.
template <typename S>
Var op_sq_err_masked_mean(TapeT<S>& tp, Var pred, const TensorT<S>& target, const TensorT<S>& mask) {
    const auto& pv = tp.val(pred);
    check_same_shape(pv, target, "sq_err_masked_mean");
    const int n = pv.dim(0), h = pv.dim(1), w = pv.dim(2), c = pv.dim(3);
    if (mask.dim(0) != n || mask.dim(1) != h || mask.dim(2) != w || mask.dim(3) != 1)
        throw std::invalid_argument("sq_err_masked_mean: mask must be (N,H,W,1)");
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t p = 0; p < (int64_t)n * h * w; ++p) {
        if (mask[p] == S(0)) continue;
        count += c;
        const S* pp = pv.ptr() + p * c;
        const S* tt = target.ptr() + p * c;
        for (int q = 0; q < c; ++q) {
            const double d = (double)pp[q] - (double)tt[q];
            acc += d * d;
        }
    }
    TensorT<S> out = TensorT<S>::scalar(count ? (S)(acc / (double)count) : S(0));
    return tp.make(std::move(out), tp.needs_grad(pred),
                   [pred, target, mask, n, h, w, c, count](TapeT<S>& t, Var id) {
        if (!count) return;
        const S g = t.grad(id)[0];
        const auto& pv = t.val(pred);
        auto& gp = t.grad(pred);
        const S coef = g * S(2) / (S)count;
        for (int64_t p = 0; p < (int64_t)n * h * w; ++p) {
            if (mask[p] == S(0)) continue;
            for (int q = 0; q < c; ++q)
                gp[p * c + q] += coef * (pv[p * c + q] - target[p * c + q]);
        }
    });
}

template <typename S>
Var op_sqrt_scalar(TapeT<S>& tp, Var a) {
    const auto& av = tp.val(a);
    if (av.numel() != 1) throw std::invalid_argument("sqrt_scalar expects a scalar");
    TensorT<S> out = TensorT<S>::scalar(std::sqrt(av[0]));
    return tp.make(std::move(out), tp.needs_grad(a), [a](TapeT<S>& t, Var id) {
        const S y = t.val(id)[0];
        if (y > S(0)) t.grad(a)[0] += t.grad(id)[0] / (S(2) * y);
    });
}

template <typename S>
Var op_dot_readout(TapeT<S>& tp, Var x, const TensorT<S>& weights) {
    const auto& xv = tp.val(x);
    check_same_shape(xv, weights, "dot_readout");
    double acc = 0.0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += (double)xv[i] * weights[i];
    TensorT<S> out = TensorT<S>::scalar((S)acc);
    return tp.make(std::move(out), tp.needs_grad(x), [x, weights](TapeT<S>& t, Var id) {
        const S g = t.grad(id)[0];
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * weights[i];
    });
}

// logits (N,V), integer labels; mean cross entropy
template <typename S>
Var op_cross_entropy(TapeT<S>& tp, Var logits, std::vector<int> labels) {
    const auto& lv = tp.val(logits);
    const int n = lv.dim(0), v = lv.dim(1);
    if ((int)labels.size() != n) throw std::invalid_argument("cross_entropy: labels size mismatch");
    double acc = 0.0;
    TensorT<S> probs({n, v});
    for (int i = 0; i < n; ++i) {
        const S* row = lv.ptr() + (int64_t)i * v;
        S mx = row[0];
        for (int q = 1; q < v; ++q) mx = std::max(mx, row[q]);
        double sum = 0.0;
        for (int q = 0; q < v; ++q) sum += std::exp((double)(row[q] - mx));
        const double logz = std::log(sum) + mx;
        acc += logz - row[labels[(size_t)i]];
        for (int q = 0; q < v; ++q) probs[(int64_t)i * v + q] = (S)std::exp(row[q] - logz);
    }
    TensorT<S> out = TensorT<S>::scalar((S)(acc / n));
    return tp.make(std::move(out), tp.needs_grad(logits),
                   [logits, labels = std::move(labels), probs, n, v](TapeT<S>& t, Var id) {
        const S g = t.grad(id)[0];
        auto& gl = t.grad(logits);
        const S coef = g / (S)n;
        for (int i = 0; i < n; ++i)
            for (int q = 0; q < v; ++q)
                gl[(int64_t)i * v + q] +=
                    coef * (probs[(int64_t)i * v + q] - (q == labels[(size_t)i] ? S(1) : S(0)));
    });
}

}  // namespace glyphdiff
