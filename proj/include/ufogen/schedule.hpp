#pragma once

// Closed-form Gaussian diffusion math on a discrete T-step schedule.
//
// Index convention: t = 0 is clean data (alpha_bar[0] = 1), t = 1..T are the
// noisy steps. Every op that takes a "previous" index accepts an arbitrary
// earlier index, so the same code serves single steps (t_prev = t - 1) and the
// coarse steps used for training and few-step sampling (t_prev = t - S).
//
// Batched variants take one index per row of the batch.

#include <cstddef>
#include <span>
#include <vector>

#include "ufogen/autodiff.hpp"

namespace ufogen {

class NoiseSchedule {
 public:
  // `betas` holds beta[1..T].
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;  // valid for 0..T

  // Stored single-step posterior q(x_{t-1} | x_t, x_0) coefficients.
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;
  double posterior_variance(int t) const;

  // Effective variance of the jump t_prev -> t: 1 - alpha_bar[t]/alpha_bar[t_prev].
  double transition_beta(int t, int t_prev) const;

  // alpha_bar recomputed as exp(sum log(1 - beta)), for stability checks.
  double alpha_bar_log_space(int t) const;

  // Throws IndexError unless lo <= t <= T.
  void check_index(int t, int lo = 0) const;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> post_x0_;
  std::vector<double> post_xt_;
  std::vector<double> post_var_;
};

// beta linearly interpolated from beta_min at t=1 to beta_max at t=T.
NoiseSchedule linear_schedule(int steps, double beta_min, double beta_max);

// Defaults: T=1000, beta in [1e-4, 0.02].
NoiseSchedule default_schedule();

// Short preset for fast experiments: T=4.
NoiseSchedule short_schedule();

// Isotropic Gaussian N(mean, covariance_scale * I). covariance_scale is
// shared by all rows when the mean is a batch.
struct GaussianParams {
  Tensor mean;
  double covariance_scale = 1.0;
};

// Per-row isotropic Gaussians for a batch with mixed time indices.
struct BatchGaussian {
  Tensor mean;
  std::vector<double> variance;  // one per row
};

// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise. t = 0 returns x0.
Tensor marginal_sample(const NoiseSchedule& s, const Tensor& x0, int t,
                       const Tensor& noise);
Tensor marginal_sample(const NoiseSchedule& s, const Tensor& x0,
                       std::span<const int> t, const Tensor& noise);

// sqrt(1 - beta[t]) * x_prev + sqrt(beta[t]) * noise, 1 <= t <= T.
Tensor step_sample(const NoiseSchedule& s, const Tensor& x_prev, int t,
                   const Tensor& noise);

// Forward jump from index t_prev to t > t_prev (a coarse step_sample).
Tensor transition_sample(const NoiseSchedule& s, const Tensor& x_prev,
                         std::span<const int> t, std::span<const int> t_prev,
                         const Tensor& noise);

// q(x_{t-1} | x_t, x_0) from the stored coefficients.
GaussianParams posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                                const Tensor& x0, int t);

// q(x_{t_prev} | x_t, x_0) for an arbitrary earlier index.
GaussianParams posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                                const Tensor& x0, int t, int t_prev);
BatchGaussian posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                               const Tensor& x0, std::span<const int> t,
                               std::span<const int> t_prev);

// mean + sqrt(variance) * noise, per row.
Tensor sample_gaussian(const BatchGaussian& g, const Tensor& noise);
Tensor sample_gaussian(const GaussianParams& g, const Tensor& noise);

// KL(p || q) between isotropic Gaussians of dimension `dim`. Means must be
// single vectors (size == dim).
double gaussian_kl(const GaussianParams& p, const GaussianParams& q,
                   std::size_t dim);

// (1 - beta) / (2 beta) with beta = beta[t].
double reconstruction_weight(const NoiseSchedule& s, int t);
// Same with beta = transition_beta(t, t_prev).
double reconstruction_weight(const NoiseSchedule& s, int t, int t_prev);

enum class GammaMode { kConstant, kDerived };

// Constant: 1. Derived: alpha_bar[t-1] * (1 - beta[t]) / (2 beta[t]).
double gamma(const NoiseSchedule& s, int t, GammaMode mode);
// Derived over a coarse jump: alpha_bar[t_prev] * reconstruction_weight(t, t_prev).
double gamma(const NoiseSchedule& s, int t, int t_prev, GammaMode mode);

// [n x 1] column holding `values`, for per-row scaling via broadcasting.
Tensor column(std::span<const double> values);

}  // namespace ufogen
