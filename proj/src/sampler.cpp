#include "ufogen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ufogen/errors.hpp"

namespace ufogen {

namespace {

void require_finite(const Tensor& x, int t) {
  const auto d = x.data();
  if (!std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); })) {
    throw DivergenceError(t, "non-finite sample state at t=" + std::to_string(t));
  }
}

}  // namespace

Tensor one_step_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                       std::mt19937_64& rng, bool use_ema) {
  NoGradGuard no_grad;
  const int T = s.steps();
  const Tensor x_T = normal_tensor(n, m.architecture().data_dim, rng);
  Tensor out = generator_forward(m, x_T, T, use_ema);
  require_finite(out, 0);
  return out;
}

std::vector<int> coarse_grid(int steps, int k) {
  if (k < 1 || k > steps) {
    throw ConfigError("sampling steps k=" + std::to_string(k) + " must lie in [1, " +
                      std::to_string(steps) + "]");
  }
  std::vector<int> grid;
  for (int i = 0; i <= k; ++i) {
    grid.push_back(steps - static_cast<int>(static_cast<long long>(i) * steps / k));
  }
  return grid;
}

Tensor multi_step_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                         int k, Parameterization param, std::mt19937_64& rng,
                         bool use_ema) {
  const auto grid = coarse_grid(s.steps(), k);
  NoGradGuard no_grad;
  const std::size_t d = m.architecture().data_dim;
  Tensor x = normal_tensor(n, d, rng);
  for (int i = 0; i < k; ++i) {
    const int t = grid[i], next = grid[i + 1];
    const Tensor x0_hat = generator_forward(m, x, t, use_ema);
    if (next == 0) {
      require_finite(x0_hat, 0);
      return x0_hat;
    }
    const Tensor noise = normal_tensor(n, d, rng);
    x = param == Parameterization::kPosterior
            ? sample_gaussian(posterior_params(s, x, x0_hat, t, next), noise)
            : marginal_sample(s, x0_hat, next, noise);
    require_finite(x, next);
  }
  return x;  // unreachable: the grid always ends at 0
}

Tensor ddpm_ancestral_sample(const ModelPair& m, const NoiseSchedule& s, std::size_t n,
                             std::mt19937_64& rng, bool use_ema) {
  NoGradGuard no_grad;
  const std::size_t d = m.architecture().data_dim;
  Tensor x = normal_tensor(n, d, rng);
  for (int t = s.steps(); t >= 1; --t) {
    const Tensor x0_hat = generator_forward(m, x, t, use_ema);
    const Tensor noise = normal_tensor(n, d, rng);
    x = sample_gaussian(posterior_params(s, x, x0_hat, t), noise);
    require_finite(x, t - 1);
  }
  return x;
}

Tensor sample_for(ObjectiveKind kind, const ModelPair& m, const NoiseSchedule& s,
                  std::size_t n, int k, std::mt19937_64& rng, bool use_ema) {
  if (kind == ObjectiveKind::kDdpm && k == s.steps()) {
    return ddpm_ancestral_sample(m, s, n, rng, use_ema);
  }
  return multi_step_sample(m, s, n, k, parameterization_of(kind), rng, use_ema);
}

}  // namespace ufogen
