#pragma once

// Independent oracles used by the test suites. These intentionally re-derive
// results through different routes than the implementation under test.

#include <cmath>
#include <functional>
#include <vector>

#include "glyphdiff/geometry.hpp"
#include "glyphdiff/tensor.hpp"

namespace testutil {

using glyphdiff::Point2;
using glyphdiff::RectI;

// plain 2x2 rotation about a center, y-down frame
inline Point2 rotate_oracle(const Point2& p, const Point2& c, double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    return {c.x + ca * (p.x - c.x) - sa * (p.y - c.y),
            c.y + sa * (p.x - c.x) + ca * (p.y - c.y)};
}

// direct bilinear formula with half-pixel centers and border clamping;
// samples a crop rect of `src` (N assumed 1, channels-last)
template <typename S>
glyphdiff::TensorT<S> bilinear_crop_oracle(const glyphdiff::TensorT<S>& src, const RectI& r,
                                           int oh, int ow) {
    const int h = src.dim(1), w = src.dim(2), c = src.dim(3);
    (void)h;
    glyphdiff::TensorT<S> out({1, oh, ow, c});
    const int rh = r.height(), rw = r.width();
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double fy = (oy + 0.5) * rh / oh - 0.5;
            double fx = (ox + 0.5) * rw / ow - 0.5;
            fy = std::min(std::max(fy, 0.0), (double)rh - 1);
            fx = std::min(std::max(fx, 0.0), (double)rw - 1);
            const int y0 = (int)fy, x0 = (int)fx;
            const int y1 = std::min(y0 + 1, rh - 1), x1 = std::min(x0 + 1, rw - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int q = 0; q < c; ++q) {
                auto at = [&](int yy, int xx) {
                    return (double)src[((int64_t)(r.y0 + yy) * w + (r.x0 + xx)) * c + q];
                };
                const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                out[((int64_t)oy * ow + ox) * c + q] = (S)v;
            }
        }
    return out;
}

// scatter-form fractional area pooling: each input pixel distributes its
// value into the covering output cells, then cells divide by their area
template <typename S>
glyphdiff::TensorT<S> area_pool_oracle(const glyphdiff::TensorT<S>& src, int rh, int rw) {
    const int h = src.dim(1), w = src.dim(2), c = src.dim(3);
    glyphdiff::TensorT<S> acc({1, rh, rw, c});
    const double by = (double)h / rh, bx = (double)w / rw;
    for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
            const double ylo = iy, yhi = iy + 1, xlo = ix, xhi = ix + 1;
            for (int oy = 0; oy < rh; ++oy) {
                const double cy0 = oy * by, cy1 = (oy + 1) * by;
                const double wy = std::min(yhi, cy1) - std::max(ylo, cy0);
                if (wy <= 0) continue;
                for (int ox = 0; ox < rw; ++ox) {
                    const double cx0 = ox * bx, cx1 = (ox + 1) * bx;
                    const double wx = std::min(xhi, cx1) - std::max(xlo, cx0);
                    if (wx <= 0) continue;
                    for (int q = 0; q < c; ++q)
                        acc[((int64_t)oy * rw + ox) * c + q] +=
                            (S)(wy * wx) * src[((int64_t)iy * w + ix) * c + q];
                }
            }
        }
    const double inv_area = 1.0 / (by * bx);
    for (auto& v : acc.data) v = (S)(v * inv_area);
    return acc;
}

// independent fold-based reduction for multi-person integration
template <typename S>
std::vector<glyphdiff::TensorT<S>> fold_sum_oracle(
    const std::vector<std::vector<glyphdiff::TensorT<S>>>& sets, bool average) {
    std::vector<glyphdiff::TensorT<S>> out;
    for (size_t site = 0; site < sets.front().size(); ++site) {
        glyphdiff::TensorT<S> acc(sets.front()[site].shape);
        for (const auto& s : sets)
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += s[site][i];
        if (average)
            for (auto& v : acc.data) v /= (S)sets.size();
        out.push_back(std::move(acc));
    }
    return out;
}

// central finite difference of a scalar functional at one coordinate
inline double central_diff(const std::function<double(double)>& f_of_delta, double h = 1e-4) {
    return (f_of_delta(h) - f_of_delta(-h)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-10});
    return std::abs(a - b) / scale;
}

}  // namespace testutil
