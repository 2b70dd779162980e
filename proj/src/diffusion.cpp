#include "glyphdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace glyphdiff {

DiffusionSchedule make_schedule(int max_t, double beta_lo, double beta_hi) {
    if (max_t < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    if (!(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0))
        throw std::invalid_argument("make_schedule: need 0 < beta_lo <= beta_hi < 1");
    DiffusionSchedule s;
    s.max_t = max_t;
    s.beta_lo = beta_lo;
    s.beta_hi = beta_hi;
    s.beta.resize((size_t)max_t + 1, 0.0);
    s.alpha_bar.resize((size_t)max_t + 1, 1.0);
    for (int t = 1; t <= max_t; ++t) {
        s.beta[(size_t)t] =
            max_t == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * (double)(t - 1) / (max_t - 1);
        s.alpha_bar[(size_t)t] = s.alpha_bar[(size_t)t - 1] * (1.0 - s.beta[(size_t)t]);
    }
    return s;
}

Tensor encode_latent(const Image& img, int patch) {
    if (img.height % patch || img.width % patch)
        throw std::invalid_argument("encode_latent: image size not divisible by patch factor");
    const int lh = img.height / patch, lw = img.width / patch, lc = 3 * patch * patch;
    Tensor z({1, lh, lw, lc});
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
            float* o = z.ptr() + ((int64_t)y * lw + x) * lc;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx) {
                    const float* p = img.px(y * patch + dy, x * patch + dx);
                    for (int c = 0; c < 3; ++c) o[(dy * patch + dx) * 3 + c] = p[c];
                }
        }
    return z;
}

Image decode_latent(const Tensor& latent, int patch) {
    if (latent.shape.size() != 4 || latent.dim(0) != 1 || latent.dim(3) != 3 * patch * patch)
        throw std::invalid_argument("decode_latent: expected (1,H,W," +
                                    std::to_string(3 * patch * patch) + "), got " +
                                    shape_str(latent.shape));
    const int lh = latent.dim(1), lw = latent.dim(2), lc = latent.dim(3);
    Image img(lh * patch, lw * patch);
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
            const float* i = latent.ptr() + ((int64_t)y * lw + x) * lc;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx) {
                    float* p = img.px(y * patch + dy, x * patch + dx);
                    for (int c = 0; c < 3; ++c) p[c] = i[(dy * patch + dx) * 3 + c];
                }
        }
    return img;
}

Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const DiffusionSchedule& sched) {
    check_same_shape(z0, eps, "add_noise");
    if (t < 0 || t > sched.max_t) throw std::invalid_argument("add_noise: t outside [0, T]");
    const float a = (float)std::sqrt(sched.alpha_bar[(size_t)t]);
    const float b = (float)std::sqrt(1.0 - sched.alpha_bar[(size_t)t]);
    Tensor out(z0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_prd, int t, int t_prev,
                 const DiffusionSchedule& sched) {
    check_same_shape(z_t, eps_prd, "ddim_step");
    if (t_prev > t) throw std::invalid_argument("ddim_step: t_prev must be <= t");
    if (t_prev == t) return z_t;
    const double ab_t = sched.alpha_bar[(size_t)t];
    const double ab_p = sched.alpha_bar[(size_t)t_prev];
    if (ab_t <= 0.0) throw std::logic_error("ddim_step: alpha_bar_t must be positive");
    const float inv_sqrt_ab = (float)(1.0 / std::sqrt(ab_t));
    const float sq1m_t = (float)std::sqrt(1.0 - ab_t);
    const float sq_ab_p = (float)std::sqrt(ab_p);
    const float sq1m_p = (float)std::sqrt(1.0 - ab_p);
    Tensor out(z_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const float x0 = (z_t[i] - sq1m_t * eps_prd[i]) * inv_sqrt_ab;
        out[i] = sq_ab_p * x0 + sq1m_p * eps_prd[i];
    }
    return out;
}

std::vector<int> ddim_timesteps(int max_t, int steps) {
    if (steps < 1) throw std::invalid_argument("ddim_timesteps: steps must be >= 1");
    std::vector<int> ts((size_t)steps + 1);
    for (int k = 0; k <= steps; ++k)
        ts[(size_t)k] = (int)std::lround((double)max_t * (steps - k) / steps);
    return ts;
}

}  // namespace glyphdiff
