#include "ufogen/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <tuple>

#include "ufogen/autodiff.hpp"
#include "ufogen/data_eval.hpp"
#include "ufogen/networks.hpp"
#include "ufogen/objectives.hpp"
#include "ufogen/schedule.hpp"

namespace ufogen {

namespace {

CheckResult below(std::string name, double measured, double tol) {
  return {std::move(name), measured, "<", tol, measured < tol};
}

CheckResult above(std::string name, double measured, double tol) {
  return {std::move(name), measured, ">", tol, measured > tol};
}

std::string indexed(const std::string& base, double i) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s[%g]", base.c_str(), i);
  return buf;
}

Tensor random_normal(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Smooth random density on a 1-D grid: a mixture of three Gaussian bumps.
std::vector<double> bump_mixture(std::size_t cells, double width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> center(-4.0, 4.0), spread(0.2, 1.0), weight(0.2, 1.0);
  std::vector<double> w(cells, 0.0);
  for (int b = 0; b < 3; ++b) {
    const double c = center(rng), s = spread(rng), a = weight(rng);
    for (std::size_t i = 0; i < cells; ++i) {
      const double x = -8.0 + (static_cast<double>(i) + 0.5) * width;
      w[i] += a * std::exp(-0.5 * (x - c) * (x - c) / (s * s));
    }
  }
  return w;
}

}  // namespace

std::vector<CheckResult> check_gaussian_kl(const VerifyOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x4B4CULL);
  std::uniform_int_distribution<int> dim_dist(1, 4);
  std::uniform_real_distribution<double> scale_dist(0.5, 2.0);
  std::normal_distribution<double> normal;
  std::vector<CheckResult> out;
  for (int pair = 0; pair < 10; ++pair) {
    const auto d = static_cast<std::size_t>(dim_dist(rng));
    std::vector<double> mu1(d), mu2(d);
    for (auto& v : mu1) v = normal(rng);
    for (auto& v : mu2) v = normal(rng);
    const double c1 = scale_dist(rng), c2 = scale_dist(rng);
    const GaussianParams p{Tensor::from({d}, mu1), c1}, q{Tensor::from({d}, mu2), c2};
    const double closed = opts.kl_scale * gaussian_kl(p, q, d);

    // E_p[log p(x) - log q(x)].
    const double half_log = 0.5 * static_cast<double>(d) * std::log(c2 / c1);
    const double sd1 = std::sqrt(c1);
    double acc = 0.0;
    for (std::size_t k = 0; k < opts.kl_samples; ++k) {
      double r1 = 0.0, r2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double z = normal(rng);
        const double x = mu1[j] + sd1 * z;
        r1 += z * z;
        r2 += (x - mu2[j]) * (x - mu2[j]);
      }
      acc += half_log - 0.5 * r1 + 0.5 * r2 / c2;
    }
    const double mc = acc / static_cast<double>(opts.kl_samples);
    out.push_back(below(indexed("gaussian_kl_vs_monte_carlo", pair), std::abs(closed - mc), 1e-2));
  }
  return out;
}

std::vector<CheckResult> check_convolution_matching(const VerifyOptions& opts) {
  constexpr std::size_t kCells = 1024;
  const double width = 16.0 / kCells;
  std::mt19937_64 rng(opts.seed ^ 0x1E33A1ULL);
  std::uniform_real_distribution<double> unit;

  struct Pair {
    GridDensity p, q;
  };
  std::vector<Pair> equal, unequal;
  for (int i = 0; i < 10; ++i) {
    auto w = bump_mixture(kCells, width, rng);
    auto scaled = w;
    for (auto& v : scaled) v *= 3.0;  // same density after renormalization
    equal.push_back({GridDensity::from_weights({kCells}, width, w),
                     GridDensity::from_weights({kCells}, width, scaled)});
  }
  // Half independent mixtures, half mixtures of p with another density
  // sized so the L1 gap is exactly 0.1.
  while (unequal.size() < 40) {
    GridDensity p = GridDensity::from_weights({kCells}, width, bump_mixture(kCells, width, rng));
    GridDensity r = GridDensity::from_weights({kCells}, width, bump_mixture(kCells, width, rng));
    const double gap = l1_distance(p, r);
    if (gap < 0.1) continue;
    if (unequal.size() % 2 == 0) {
      unequal.push_back({p, r});
    } else {
      const double eps = 0.1 / gap;
      std::vector<double> mix(kCells);
      for (std::size_t i = 0; i < kCells; ++i) mix[i] = (1 - eps) * p.mass[i] + eps * r.mass[i];
      unequal.push_back({p, GridDensity::from_weights({kCells}, width, mix)});
    }
  }

  std::vector<CheckResult> out;
  double max_equal_l1 = 0.0, min_unequal_l1 = 1e300;
  for (const auto& e : equal) max_equal_l1 = std::max(max_equal_l1, l1_distance(e.p, e.q));
  for (const auto& u : unequal) min_unequal_l1 = std::min(min_unequal_l1, l1_distance(u.p, u.q));
  out.push_back(below("convolution_matching_equal_pairs_l1", max_equal_l1, 1e-12));
  out.push_back(above("convolution_matching_unequal_pairs_l1", min_unequal_l1, 0.1 - 1e-9));
  for (double sigma : {0.1, 0.5, 1.0}) {
    double worst_equal = 0.0, worst_unequal = 1e300;
    for (const auto& e : equal) {
      worst_equal = std::max(worst_equal,
                             jsd_grid(convolve_density(e.p, sigma), convolve_density(e.q, sigma)));
    }
    for (const auto& u : unequal) {
      worst_unequal = std::min(
          worst_unequal, jsd_grid(convolve_density(u.p, sigma), convolve_density(u.q, sigma)));
    }
    out.push_back(below(indexed("convolution_matching_equal_jsd_sigma", sigma), worst_equal, 1e-12));
    out.push_back(above(indexed("convolution_matching_unequal_jsd_sigma", sigma), worst_unequal, 1e-6));
  }
  return out;
}

std::vector<CheckResult> check_recon_equivalence(const VerifyOptions& opts) {
  const NoiseSchedule s = default_schedule();
  std::mt19937_64 rng(opts.seed ^ 0x2EC0ULL);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> tdist(1, s.steps());
  std::vector<CheckResult> out;
  for (int i = 0; i < 10; ++i) {
    const double x0[2] = {2.0 * normal(rng), 2.0 * normal(rng)};
    const double xh[2] = {2.0 * normal(rng), 2.0 * normal(rng)};
    const int t = tdist(rng);
    const auto r = recon_equivalence_check(s, t, x0, xh, opts.recon_trials, rng);
    out.push_back(below(indexed("recon_equivalence_abs_z_t", t), std::abs(r.z_score), 4.0));
  }
  return out;
}

std::vector<CheckResult> check_op_gradients(const VerifyOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x6AD0ULL);
  const Shape shape{3, 4};
  using Unary = std::function<Tensor(const Tensor&)>;
  using Binary = std::function<Tensor(const Tensor&, const Tensor&)>;

  std::vector<std::pair<std::string, Unary>> unary{
      {"scale", [](const Tensor& x) { return scale(x, -1.7); }},
      {"add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }},
      {"neg", [](const Tensor& x) { return neg(x); }},
      {"square", [](const Tensor& x) { return square(x); }},
      {"sigmoid", [](const Tensor& x) { return sigmoid(x); }},
      {"softplus", [](const Tensor& x) { return softplus(x); }},
      {"tanh", [](const Tensor& x) { return tanh(x); }},
      {"silu", [](const Tensor& x) { return silu(x); }},
      {"leaky_relu", [](const Tensor& x) { return leaky_relu(x, 0.2); }},
      {"sum", [](const Tensor& x) { return sum(x); }},
      {"sum_axis0", [](const Tensor& x) { return sum(x, 0); }},
      {"mean", [](const Tensor& x) { return mean(x); }},
      {"mean_axis1", [](const Tensor& x) { return mean(x, 1); }},
      {"squared_l2_norm", [](const Tensor& x) { return squared_l2_norm(x); }},
      {"squared_l2_norm_axis1", [](const Tensor& x) { return squared_l2_norm(x, 1); }},
  };
  std::vector<std::tuple<std::string, Binary, Shape>> binary{
      {"add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, shape},
      {"add_broadcast_row", [](const Tensor& a, const Tensor& b) { return add(a, b); }, Shape{1, 4}},
      {"sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, shape},
      {"mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, shape},
      {"mul_broadcast_col", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, Shape{3, 1}},
      {"matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); }, Shape{4, 2}},
      {"concat_cols",
       [](const Tensor& a, const Tensor& b) { return concat_cols({a, b}); }, Shape{3, 2}},
  };

  std::vector<CheckResult> out;
  // Each op is contracted with fixed random weights so every output entry matters.
  auto contract = [&rng](const Tensor& y, std::map<std::size_t, Tensor>& cache) -> Tensor {
    auto it = cache.find(y.size() * 131 + y.rank());
    if (it == cache.end()) {
      it = cache.emplace(y.size() * 131 + y.rank(), random_normal(y.shape(), rng)).first;
    }
    return sum(mul(y, it->second));
  };
  for (const auto& [name, op] : unary) {
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) {
      std::map<std::size_t, Tensor> weights;
      Tensor x = random_normal(shape, rng);
      worst = std::max(worst, finite_difference_check(
                                  [&](const Tensor& v) { return contract(op(v), weights); }, x));
    }
    out.push_back(below("gradient_op_" + name, worst, 1e-5));
  }
  for (const auto& [name, op, other] : binary) {
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) {
      std::map<std::size_t, Tensor> weights;
      Tensor a = random_normal(shape, rng), b = random_normal(other, rng);
      worst = std::max(worst, finite_difference_check(
                                  [&](const Tensor& v) { return contract(op(v, b), weights); }, a));
      worst = std::max(worst, finite_difference_check(
                                  [&](const Tensor& v) { return contract(op(a, v), weights); }, b));
    }
    out.push_back(below("gradient_op_" + name, worst, 1e-5));
  }
  return out;
}

std::vector<CheckResult> check_loss_gradients(const VerifyOptions& opts) {
  const NoiseSchedule s = default_schedule();
  Architecture arch;
  arch.generator_hidden = {16, 16};
  arch.discriminator_hidden = {16, 16};
  arch.time_embedding_dim = 8;
  const ObjectiveSettings obj{ObjectiveKind::kUfogen, 1.0, GammaMode::kConstant,
                              DiscriminatorTime::kPrevious};
  std::mt19937_64 rng(opts.seed ^ 0x10557ULL);
  std::uniform_int_distribution<int> tdist(1, s.steps());
  std::vector<CheckResult> out;
  for (int point = 0; point < 5; ++point) {
    ModelPair m(arch, s.steps(), opts.seed * 31 + static_cast<std::uint64_t>(point));
    // Random last generator layer so the generator is not the zero map.
    std::normal_distribution<double> normal(0.0, 0.3);
    for (auto& v : m.generator().params[m.generator().params.size() - 2].mutable_data()) {
      v = normal(rng);
    }
    const std::size_t n = 8;
    std::vector<int> t(n), t_prev(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = tdist(rng);
      t_prev[i] = std::max(0, t[i] - 250);
    }
    const Tensor x0 = make_toy(ToySpec{}, n, opts.seed + 7 * static_cast<std::uint64_t>(point));
    const DiffusionDraw draw = draw_diffusion(s, x0, t, t_prev, rng);

    auto g_loss = [&] {
      const GeneratorPass fake = run_generator(obj, s, m, draw);
      return generator_objective(obj, s, m, draw, fake).total;
    };
    const GeneratorPass fixed_fake = [&] {
      NoGradGuard guard;
      return run_generator(obj, s, m, draw);
    }();
    auto d_loss = [&] { return discriminator_objective(obj, m, draw, fixed_fake); };

    out.push_back(below(indexed("gradient_ufogen_generator_loss_point", point),
                        finite_difference_check(g_loss, m.generator().params), 1e-5));
    out.push_back(below(indexed("gradient_ufogen_discriminator_loss_point", point),
                        finite_difference_check(d_loss, m.discriminator().params), 1e-5));
  }
  return out;
}

std::vector<CheckResult> check_marginal_consistency(const VerifyOptions& opts) {
  const NoiseSchedule s = default_schedule();
  const int T = s.steps();
  std::vector<int> spots;
  for (int i = 0; i < 16; ++i) spots.push_back(1 + static_cast<int>(std::lround(i * (T - 1) / 15.0)));

  const std::size_t n = opts.marginal_draws;
  const double x0v[2] = {1.5, -2.0};
  std::vector<double> init(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    init[2 * i] = x0v[0];
    init[2 * i + 1] = x0v[1];
  }
  NoGradGuard guard;
  std::mt19937_64 rng(opts.seed ^ 0x3A26ULL);
  Tensor x = Tensor::from({n, 2}, std::move(init));
  std::vector<CheckResult> out;
  std::size_t next = 0;
  for (int t = 1; t <= T && next < spots.size(); ++t) {
    x = step_sample(s, x, t, random_normal({n, 2}, rng));
    if (t != spots[next]) continue;
    ++next;
    const double ab = s.alpha_bar(t);
    double worst_z = 0.0, worst_var = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x.data()[2 * i + j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dlt = x.data()[2 * i + j] - mean;
        var += dlt * dlt;
      }
      var /= static_cast<double>(n - 1);
      const double se = std::sqrt(var / static_cast<double>(n));
      worst_z = std::max(worst_z, std::abs(mean - std::sqrt(ab) * x0v[j]) / se);
      worst_var = std::max(worst_var, std::abs(var - (1.0 - ab)) / (1.0 - ab));
    }
    out.push_back(below(indexed("marginal_mean_abs_z_t", t), worst_z, 4.0));
    out.push_back(below(indexed("marginal_variance_rel_err_t", t), worst_var, 0.02));
  }
  return out;
}

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> rows;
  for (const auto& part : {check_gaussian_kl(opts), check_convolution_matching(opts),
                           check_recon_equivalence(opts), check_op_gradients(opts),
                           check_loss_gradients(opts), check_marginal_consistency(opts)}) {
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

bool all_pass(const std::vector<CheckResult>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckResult& r) { return r.pass; });
}

std::string format_verify_report(const std::vector<CheckResult>& rows) {
  std::string out = "check,measured,relation,tolerance,verdict\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.name;
    std::snprintf(buf, sizeof buf, ",%.6e,", r.measured);
    out += buf;
    out += r.relation;
    std::snprintf(buf, sizeof buf, ",%.3g,", r.tolerance);
    out += buf;
    out += r.pass ? "pass\n" : "FAIL\n";
  }
  return out;
}

}  // namespace ufogen
