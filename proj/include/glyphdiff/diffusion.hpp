#pragma once

#include <vector>

#include "glyphdiff/image.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Linear-beta DDPM schedule with the t=0 no-noise convention:
// alpha_bar[0] = 1, alpha_bar[t] = prod_{s=1..t} (1 - beta_s).
struct DiffusionSchedule {
    int max_t = 0;
    double beta_lo = 0.0, beta_hi = 0.0;
    std::vector<double> beta;       // beta[t] for t = 1..max_t; beta[0] unused
    std::vector<double> alpha_bar;  // alpha_bar[0..max_t], strictly decreasing
};

DiffusionSchedule make_schedule(int max_t, double beta_lo, double beta_hi);

// fixed space-to-depth latent codec, patch factor f (latent channels 3*f^2)
Tensor encode_latent(const Image& img, int patch = 2);      // (1, H/f, W/f, 3f^2)
Image decode_latent(const Tensor& latent, int patch = 2);   // exact inverse; no clamping

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const DiffusionSchedule& sched);

// deterministic (eta = 0) reverse update from t to t_prev < t
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_prd, int t, int t_prev,
                 const DiffusionSchedule& sched);

// descending timestep grid with uniform stride: steps+1 entries from max_t to 0
std::vector<int> ddim_timesteps(int max_t, int steps);

}  // namespace glyphdiff
