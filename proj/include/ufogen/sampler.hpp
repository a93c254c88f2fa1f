#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "ufogen/networks.hpp"
#include "ufogen/objectives.hpp"
#include "ufogen/schedule.hpp"

namespace ufogen {

// x_T ~ N(0, I), returns G(x_T, T).
Tensor one_step_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                       std::mt19937_64& rng, bool use_ema = true);

// Equally spaced grid T = t_0 > t_1 > ... > t_k = 0 with t_i = T - floor(i T / k).
// Throws ConfigError unless 1 <= k <= T.
std::vector<int> coarse_grid(int steps, int k);

// Walks the coarse grid: x0_hat = G(x_t, t), then the next state comes from the
// posterior q(x_next | x_t, x0_hat) or the forward marginal q(x_next | x0_hat).
// The last segment returns x0_hat. Draws x_T first, then one noise batch per
// intermediate step, so k = 1 reproduces one_step_sample for the same rng.
Tensor multi_step_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                         int k, Parameterization param, std::mt19937_64& rng,
                         bool use_ema = true);

// Full T-step ancestral chain with x_{t-1} ~ q(x_{t-1} | x_t, x0_hat).
Tensor ddpm_ancestral_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                             std::mt19937_64& rng, bool use_ema = true);

// Dispatches on the objective: DDPM uses the ancestral chain when k == T,
// otherwise the coarse sampler with the objective's parameterization.
Tensor sample_for(ObjectiveKind kind, const ModelPair& m, const NoiseSchedule& s,
                  std::size_t n, int k, std::mt19937_64& rng, bool use_ema = true);

}  // namespace ufogen
