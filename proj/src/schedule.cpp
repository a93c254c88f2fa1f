#include "ufogen/schedule.hpp"

#include <cmath>
#include <string>

namespace ufogen {

namespace {

void check_batch_indices(std::span<const int> t, const Tensor& x,
                         const char* op) {
  if (t.size() != x.rows()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(t.size()) +
                         " time indices for " + std::to_string(x.rows()) +
                         " rows");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  const std::size_t T = betas.size();
  beta_.assign(T + 1, 0.0);
  alpha_.assign(T + 1, 1.0);
  alpha_bar_.assign(T + 1, 1.0);
  post_x0_.assign(T + 1, 1.0);
  post_xt_.assign(T + 1, 0.0);
  post_var_.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta[" + std::to_string(t) + "] = " +
                        std::to_string(b) + " outside (0, 1)");
    }
    beta_[t] = b;
    alpha_[t] = 1.0 - b;
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    const double denom = 1.0 - alpha_bar_[t];
    post_x0_[t] = b * std::sqrt(alpha_bar_[t - 1]) / denom;
    post_xt_[t] = std::sqrt(alpha_[t]) * (1.0 - alpha_bar_[t - 1]) / denom;
    post_var_[t] = b * (1.0 - alpha_bar_[t - 1]) / denom;
  }
}

void NoiseSchedule::check_index(int t, int lo) const {
  if (t < lo || t > steps()) {
    throw IndexError("time index " + std::to_string(t) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(steps()) +
                     "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_index(t, 1);
  return beta_[t];
}

double NoiseSchedule::alpha(int t) const {
  check_index(t, 1);
  return alpha_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_index(t);
  return alpha_bar_[t];
}

double NoiseSchedule::posterior_coef_x0(int t) const {
  check_index(t, 1);
  return post_x0_[t];
}

double NoiseSchedule::posterior_coef_xt(int t) const {
  check_index(t, 1);
  return post_xt_[t];
}

double NoiseSchedule::posterior_variance(int t) const {
  check_index(t, 1);
  return post_var_[t];
}

double NoiseSchedule::transition_beta(int t, int t_prev) const {
  check_index(t, 1);
  check_index(t_prev);
  if (t_prev >= t) {
    throw IndexError("transition from " + std::to_string(t_prev) + " to " +
                     std::to_string(t) + " is not forward in time");
  }
  if (t_prev == t - 1) return beta_[t];
  return 1.0 - alpha_bar_[t] / alpha_bar_[t_prev];
}

double NoiseSchedule::alpha_bar_log_space(int t) const {
  check_index(t);
  double acc = 0.0;
  for (int i = 1; i <= t; ++i) acc += std::log1p(-beta_[i]);
  return std::exp(acc);
}

NoiseSchedule linear_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule length must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("need 0 < beta_min <= beta_max < 1, got " +
                      std::to_string(beta_min) + ", " +
                      std::to_string(beta_max));
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_min + frac * (beta_max - beta_min);
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule default_schedule() { return linear_schedule(1000, 1e-4, 0.02); }

NoiseSchedule short_schedule() { return linear_schedule(4, 0.1, 0.9); }

Tensor column(std::span<const double> values) {
  return Tensor::from({values.size(), 1},
                      std::vector<double>(values.begin(), values.end()));
}

Tensor marginal_sample(const NoiseSchedule& s, const Tensor& x0, int t,
                       const Tensor& noise) {
  s.check_index(t);
  check_same_shape(x0, noise, "marginal_sample");
  if (t == 0) return x0;
  const double ab = s.alpha_bar(t);
  return add(scale(x0, std::sqrt(ab)), scale(noise, std::sqrt(1.0 - ab)));
}

Tensor marginal_sample(const NoiseSchedule& s, const Tensor& x0,
                       std::span<const int> t, const Tensor& noise) {
  check_same_shape(x0, noise, "marginal_sample");
  check_batch_indices(t, x0, "marginal_sample");
  std::vector<double> a(t.size()), b(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ab = s.alpha_bar(t[i]);
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  return add(mul(x0, column(a)), mul(noise, column(b)));
}

Tensor step_sample(const NoiseSchedule& s, const Tensor& x_prev, int t,
                   const Tensor& noise) {
  s.check_index(t, 1);
  check_same_shape(x_prev, noise, "step_sample");
  const double b = s.beta(t);
  return add(scale(x_prev, std::sqrt(1.0 - b)), scale(noise, std::sqrt(b)));
}

Tensor transition_sample(const NoiseSchedule& s, const Tensor& x_prev,
                         std::span<const int> t, std::span<const int> t_prev,
                         const Tensor& noise) {
  check_same_shape(x_prev, noise, "transition_sample");
  check_batch_indices(t, x_prev, "transition_sample");
  check_batch_indices(t_prev, x_prev, "transition_sample");
  std::vector<double> a(t.size()), b(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double bt = s.transition_beta(t[i], t_prev[i]);
    a[i] = std::sqrt(1.0 - bt);
    b[i] = std::sqrt(bt);
  }
  return add(mul(x_prev, column(a)), mul(noise, column(b)));
}

namespace {

struct PosteriorCoefs {
  double x0 = 1.0;
  double xt = 0.0;
  double var = 0.0;
};

PosteriorCoefs posterior_coefs(const NoiseSchedule& s, int t, int t_prev) {
  s.check_index(t, 1);
  s.check_index(t_prev);
  if (t_prev >= t) {
    throw IndexError("posterior target " + std::to_string(t_prev) +
                     " not before " + std::to_string(t));
  }
  // Landing on clean data is deterministic; skip the 1 - alpha_bar cancellation.
  if (t_prev == 0) return {};
  if (t_prev == t - 1) {
    return {s.posterior_coef_x0(t), s.posterior_coef_xt(t),
            s.posterior_variance(t)};
  }
  const double ab_t = s.alpha_bar(t);
  const double ab_p = s.alpha_bar(t_prev);
  const double ratio = ab_t / ab_p;
  const double denom = 1.0 - ab_t;
  return {std::sqrt(ab_p) * (1.0 - ratio) / denom,
          std::sqrt(ratio) * (1.0 - ab_p) / denom,
          (1.0 - ab_p) * (1.0 - ratio) / denom};
}

}  // namespace

GaussianParams posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                                const Tensor& x0, int t) {
  return posterior_params(s, x_t, x0, t, t - 1);
}

GaussianParams posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                                const Tensor& x0, int t, int t_prev) {
  check_same_shape(x_t, x0, "posterior_params");
  const PosteriorCoefs c = posterior_coefs(s, t, t_prev);
  return {add(scale(x0, c.x0), scale(x_t, c.xt)), c.var};
}

BatchGaussian posterior_params(const NoiseSchedule& s, const Tensor& x_t,
                               const Tensor& x0, std::span<const int> t,
                               std::span<const int> t_prev) {
  check_same_shape(x_t, x0, "posterior_params");
  check_batch_indices(t, x0, "posterior_params");
  check_batch_indices(t_prev, x0, "posterior_params");
  std::vector<double> cx0(t.size()), cxt(t.size()), var(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const PosteriorCoefs c = posterior_coefs(s, t[i], t_prev[i]);
    cx0[i] = c.x0;
    cxt[i] = c.xt;
    var[i] = c.var;
  }
  return {add(mul(x0, column(cx0)), mul(x_t, column(cxt))), std::move(var)};
}

Tensor sample_gaussian(const BatchGaussian& g, const Tensor& noise) {
  check_same_shape(g.mean, noise, "sample_gaussian");
  std::vector<double> sd(g.variance.size());
  for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = std::sqrt(g.variance[i]);
  return add(g.mean, mul(noise, column(sd)));
}

Tensor sample_gaussian(const GaussianParams& g, const Tensor& noise) {
  check_same_shape(g.mean, noise, "sample_gaussian");
  if (g.covariance_scale == 0.0) return g.mean;
  return add(g.mean, scale(noise, std::sqrt(g.covariance_scale)));
}

double gaussian_kl(const GaussianParams& p, const GaussianParams& q,
                   std::size_t dim) {
  if (!(p.covariance_scale > 0.0 && q.covariance_scale > 0.0)) {
    throw ConfigError("gaussian_kl needs positive covariance scales");
  }
  if (p.mean.size() != dim || q.mean.size() != dim) {
    throw DimensionError("gaussian_kl: means must have " +
                         std::to_string(dim) + " entries");
  }
  const double d = static_cast<double>(dim);
  const double c1 = p.covariance_scale;
  const double c2 = q.covariance_scale;
  double mahalanobis = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double diff = q.mean.data()[i] - p.mean.data()[i];
    mahalanobis += diff * diff;
  }
  return 0.5 * (d * std::log(c2 / c1) - d + d * c1 / c2 + mahalanobis / c2);
}

double reconstruction_weight(const NoiseSchedule& s, int t) {
  const double b = s.beta(t);
  return (1.0 - b) / (2.0 * b);
}

double reconstruction_weight(const NoiseSchedule& s, int t, int t_prev) {
  const double b = s.transition_beta(t, t_prev);
  return (1.0 - b) / (2.0 * b);
}

double gamma(const NoiseSchedule& s, int t, GammaMode mode) {
  s.check_index(t, 1);
  if (mode == GammaMode::kConstant) return 1.0;
  return s.alpha_bar(t - 1) * reconstruction_weight(s, t);
}

double gamma(const NoiseSchedule& s, int t, int t_prev, GammaMode mode) {
  s.check_index(t, 1);
  if (mode == GammaMode::kConstant) return 1.0;
  return s.alpha_bar(t_prev) * reconstruction_weight(s, t, t_prev);
}

}  // namespace ufogen
