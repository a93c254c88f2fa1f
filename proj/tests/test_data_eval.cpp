#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "ufogen/data_eval.hpp"
#include "ufogen/verify.hpp"

using namespace ufogen;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ufogen_data_" + name);
}

// Brute-force squared MMD, written independently of the library loops.
double mmd_oracle(const Tensor& a, const Tensor& b, double h, bool unbiased) {
  auto k = [h](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double dx = x(i, 0) - y(j, 0), dy = x(i, 1) - y(j, 1);
    return std::exp(-(dx * dx + dy * dy) / (2 * h * h));
  };
  const double n = a.rows(), m = b.rows();
  double aa = 0, bb = 0, ab = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j)
      if (!unbiased || i != j) aa += k(a, i, a, j);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      if (!unbiased || i != j) bb += k(b, i, b, j);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) ab += k(a, i, b, j);
  if (unbiased) return aa / (n * (n - 1)) + bb / (m * (m - 1)) - 2 * ab / (n * m);
  return aa / (n * n) + bb / (m * m) - 2 * ab / (n * m);
}

GridDensity delta_1d(std::size_t cells, std::size_t at) {
  std::vector<double> w(cells, 0.0);
  w[at] = 1.0;
  return GridDensity::from_weights({cells}, 1.0, w);
}

}  // namespace

TEST(Toy, KindNames) {
  for (auto k : {ToyKind::kGrid25, ToyKind::kCheckerboard, ToyKind::kSwissroll})
    EXPECT_EQ(parse_toy_kind(to_string(k)), k);
  EXPECT_THROW(parse_toy_kind("moons"), ConfigError);
}

TEST(Toy, LatticeCenters) {
  auto c = ToySpec{}.centers();
  ASSERT_EQ(c.size(), 25u);
  EXPECT_EQ(c.front(), (std::array<double, 2>{-4, -4}));
  EXPECT_EQ(c.back(), (std::array<double, 2>{4, 4}));
}

TEST(Toy, SameSeedSameArray) {
  auto a = make_toy(ToySpec{}, 500, 42), b = make_toy(ToySpec{}, 500, 42);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  auto c = make_toy(ToySpec{}, 500, 43);
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Toy, VanishingSpreadSitsOnLattice) {
  auto x = make_toy(ToySpec{ToyKind::kGrid25, 1e-9}, 2000, 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (int j = 0; j < 2; ++j) {
      double v = x(r, j);
      double nearest = 2 * std::round(v / 2);
      EXPECT_LT(std::abs(v - nearest), 1e-6);
      EXPECT_LE(std::abs(nearest), 4.0);
    }
  }
}

TEST(Toy, ModeProportionsAreUniform) {
  const std::size_t n = 1000000;
  auto x = make_toy(ToySpec{}, n, 7);
  std::vector<double> count(25, 0);
  for (std::size_t r = 0; r < n; ++r) {
    int i = static_cast<int>(std::lround(x(r, 0) / 2)) + 2;
    int j = static_cast<int>(std::lround(x(r, 1) / 2)) + 2;
    count[i * 5 + j] += 1;
  }
  const double p = 1.0 / 25, se = std::sqrt(p * (1 - p) / n);
  for (double c : count) EXPECT_LT(std::abs(c / n - p), 4 * se);
}

TEST(Toy, OtherKindsAreFiniteAndBounded) {
  for (auto k : {ToyKind::kCheckerboard, ToyKind::kSwissroll}) {
    auto x = make_toy(ToySpec{k, 0.05}, 5000, 3);
    for (double v : x.data()) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_LT(std::abs(v), 6.0);
    }
  }
}

TEST(Toy, Errors) {
  EXPECT_THROW(make_toy(ToySpec{}, 0, 1), ContractError);
  EXPECT_THROW(make_toy(ToySpec{ToyKind::kGrid25, 0.0}, 10, 1), ConfigError);
}

TEST(ModeMetrics, ExactCentersCoverEverything) {
  auto c = ToySpec{}.centers();
  std::vector<double> v;
  for (auto& p : c) v.insert(v.end(), p.begin(), p.end());
  auto r = mode_metrics(Tensor::from({25, 2}, v), ToySpec{});
  EXPECT_EQ(r.modes_covered, 25);
  EXPECT_EQ(r.high_quality_fraction, 1.0);
  EXPECT_EQ(r.sample_count, 25u);
}

TEST(ModeMetrics, CollapsedSamples) {
  auto r = mode_metrics(Tensor::zeros({25, 2}), ToySpec{});
  EXPECT_EQ(r.modes_covered, 1);
  EXPECT_EQ(r.high_quality_fraction, 1.0);
  auto far = mode_metrics(Tensor::full({100, 2}, 1.0), ToySpec{});
  EXPECT_EQ(far.modes_covered, 0);
  EXPECT_EQ(far.high_quality_fraction, 0.0);
}

TEST(ModeMetrics, TrueDistributionMatchesRadialMass) {
  // A 2-D isotropic Gaussian puts 1 - exp(-9/2) of its mass within 3 sigma.
  const std::size_t n = 10000;
  auto r = mode_metrics(make_toy(ToySpec{}, n, 99), ToySpec{});
  const double p = 1 - std::exp(-4.5);
  EXPECT_EQ(r.modes_covered, 25);
  EXPECT_LT(std::abs(r.high_quality_fraction - p), 4 * std::sqrt(p * (1 - p) / n));
}

TEST(ModeMetrics, CoverageThresholdScalesWithSampleCount) {
  // 2500 samples at one center plus 1 at another: threshold max(1, 1) covers both.
  // 5001 samples: threshold 2, the lone sample no longer counts.
  auto build = [](std::size_t main) {
    std::vector<double> v(2 * (main + 1), 0.0);
    v[2 * main] = 2.0;
    return Tensor::from({main + 1, 2}, v);
  };
  EXPECT_EQ(mode_metrics(build(2499), ToySpec{}).modes_covered, 2);
  EXPECT_EQ(mode_metrics(build(5000), ToySpec{}).modes_covered, 1);
}

TEST(ModeMetrics, PermutationInvariant) {
  auto x = make_toy(ToySpec{}, 3000, 5);
  std::vector<std::size_t> idx(3000);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), std::mt19937_64(1));
  std::vector<double> v;
  for (auto i : idx) v.insert(v.end(), {x(i, 0), x(i, 1)});
  auto a = mode_metrics(x, ToySpec{}), b = mode_metrics(Tensor::from({3000, 2}, v), ToySpec{});
  EXPECT_EQ(a.modes_covered, b.modes_covered);
  EXPECT_EQ(a.high_quality_fraction, b.high_quality_fraction);
}

TEST(ModeMetrics, Errors) {
  EXPECT_THROW(mode_metrics(Tensor::zeros({4, 3}), ToySpec{}), DimensionError);
  EXPECT_THROW(mode_metrics(Tensor::zeros({4, 2}), ToySpec{ToyKind::kSwissroll, 0.05}),
               ConfigError);
}

TEST(Mmd, IdenticalSetsBiasedIsZero) {
  auto a = make_toy(ToySpec{}, 1000, 1);
  EXPECT_NEAR(mmd_rbf(a, a, 1.0, MmdEstimator::kBiased), 0.0, 1e-12);
}

TEST(Mmd, IdenticalSetsUnbiasedIsOrderOneOverN) {
  // For a == b the unbiased estimate is 4S/(n^2 (n-1)) - 2/n with S the
  // off-diagonal kernel sum over pairs i < j; it is O(1/n), not zero.
  const std::size_t n = 1000;
  auto a = make_toy(ToySpec{}, n, 1);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dx = a(i, 0) - a(j, 0), dy = a(i, 1) - a(j, 1);
      s += std::exp(-(dx * dx + dy * dy) / 2.0);
    }
  const double closed = 4 * s / (double(n) * n * (n - 1)) - 2.0 / n;
  const double got = mmd_rbf(a, a, 1.0, MmdEstimator::kUnbiased);
  EXPECT_NEAR(got, closed, 1e-12);
  EXPECT_LE(std::abs(got), 2.0 / n);
}

TEST(Mmd, MatchesBruteForceOracle) {
  auto a = make_toy(ToySpec{}, 120, 1);
  auto b = make_toy(ToySpec{ToyKind::kSwissroll, 0.05}, 90, 2);
  for (double h : {0.3, 1.0, 4.0}) {
    EXPECT_NEAR(mmd_rbf(a, b, h), mmd_oracle(a, b, h, true), 1e-12);
    EXPECT_NEAR(mmd_rbf(a, b, h, MmdEstimator::kBiased), mmd_oracle(a, b, h, false), 1e-12);
    EXPECT_NEAR(mmd_rbf(a, b, h), mmd_rbf(b, a, h), 1e-14);
  }
}

TEST(Mmd, DistantTightClustersApproachTwo) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1e-3);
  std::vector<double> va, vb;
  for (int i = 0; i < 200; ++i) {
    va.insert(va.end(), {nd(rng), nd(rng)});
    vb.insert(vb.end(), {100 + nd(rng), 100 + nd(rng)});
  }
  EXPECT_NEAR(mmd_rbf(Tensor::from({200, 2}, va), Tensor::from({200, 2}, vb), 1.0), 2.0, 1e-3);
}

TEST(Mmd, Errors) {
  auto a = make_toy(ToySpec{}, 10, 1);
  EXPECT_THROW(mmd_rbf(a, Tensor::zeros({10, 3}), 1.0), DimensionError);
  EXPECT_THROW(mmd_rbf(a, a, 0.0), ContractError);
  EXPECT_THROW(mmd_rbf(Tensor::zeros({1, 2}), a, 1.0), ContractError);
  EXPECT_THROW(median_heuristic_bandwidth(Tensor::zeros({10, 2})), ContractError);
}

TEST(Mmd, MedianHeuristicOnKnownSet) {
  // Pairwise distances of {0, 1, 3} on a line are {1, 2, 3}.
  auto x = Tensor::matrix({{0, 0}, {1, 0}, {3, 0}});
  EXPECT_DOUBLE_EQ(median_heuristic_bandwidth(x), 2.0);
}

TEST(Evaluate, TrueSamplesScoreWell) {
  auto r = evaluate(make_toy(ToySpec{}, 4000, 123), ToySpec{});
  EXPECT_EQ(r.modes_covered, 25);
  EXPECT_LT(std::abs(r.mmd), 5e-3);
  EXPECT_EQ(r.sample_count, 4000u);
  auto bad = evaluate(Tensor::zeros({4000, 2}), ToySpec{});
  EXPECT_GT(bad.mmd, 0.1);
}

TEST(Grid, FromWeightsValidation) {
  auto g = GridDensity::from_weights({4}, 0.5, {1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(g.mass[0], 0.25);
  EXPECT_NEAR(g.total(), 1.0, 1e-15);
  EXPECT_THROW(GridDensity::from_weights({3}, 1.0, {1, 1}), DimensionError);
  EXPECT_THROW(GridDensity::from_weights({2, 2, 1}, 1.0, {1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(GridDensity::from_weights({2}, 1.0, {1, -1}), ContractError);
  EXPECT_THROW(GridDensity::from_weights({2}, 1.0, {0, 0}), ContractError);
  EXPECT_THROW(GridDensity::from_weights({2}, 0.0, {1, 1}), ContractError);
}

TEST(Grid, ConvolvedDeltaIsDiscreteGaussian) {
  auto c = convolve_density(delta_1d(201, 100), 5.0);
  EXPECT_NEAR(c.total(), 1.0, 1e-12);
  double mean = 0, var = 0;
  for (std::size_t i = 0; i < 201; ++i) mean += c.mass[i] * i;
  for (std::size_t i = 0; i < 201; ++i) var += c.mass[i] * (i - mean) * (i - mean);
  EXPECT_NEAR(mean, 100.0, 1e-9);
  EXPECT_NEAR(var, 25.0, 0.05);
  EXPECT_NEAR(c.mass[101], c.mass[99], 1e-15);
}

TEST(Grid, UniformStaysUniformAwayFromEdges) {
  auto u = GridDensity::from_weights({200}, 1.0, std::vector<double>(200, 1.0));
  auto c = convolve_density(u, 3.0);
  for (std::size_t i = 30; i < 170; ++i) EXPECT_NEAR(c.mass[i], c.mass[100], 1e-12);
}

TEST(Grid, TwoConvolutionsComposeInVariance) {
  auto p = delta_1d(401, 200);
  auto twice = convolve_density(convolve_density(p, 3.0), 4.0);
  auto once = convolve_density(p, 5.0);
  EXPECT_LT(l1_distance(twice, once), 1e-3);
}

TEST(Grid, TwoDimensionalKernelIsSeparable) {
  std::vector<double> w(41 * 41, 0.0);
  w[20 * 41 + 20] = 1.0;
  auto c = convolve_density(GridDensity::from_weights({41, 41}, 1.0, w), 2.0);
  auto line = convolve_density(delta_1d(41, 20), 2.0);
  for (std::size_t i = 0; i < 41; i += 5)
    for (std::size_t j = 0; j < 41; j += 7)
      EXPECT_NEAR(c.mass[i * 41 + j], line.mass[i] * line.mass[j], 1e-15);
  EXPECT_THROW(convolve_density(line, 0.0), ContractError);
}

TEST(Grid, JsdAndL1) {
  auto a = delta_1d(10, 2), b = delta_1d(10, 7);
  EXPECT_EQ(jsd_grid(a, a), 0.0);
  EXPECT_NEAR(jsd_grid(a, b), std::log(2.0), 1e-15);
  EXPECT_NEAR(l1_distance(a, b), 2.0, 1e-15);
  EXPECT_NEAR(jsd_grid(a, b), jsd_grid(b, a), 1e-15);
  EXPECT_THROW(jsd_grid(a, delta_1d(11, 2)), DimensionError);
  EXPECT_THROW(l1_distance(a, delta_1d(11, 2)), DimensionError);
}

TEST(Grid, ConvolutionMatchingSuite) {
  VerifyOptions opts;
  for (const auto& r : check_convolution_matching(opts)) EXPECT_TRUE(r.pass) << r.name;
}

TEST(ReconEquivalence, ExactCaseAndZeroSpread) {
  auto s = default_schedule();
  std::mt19937_64 rng(1);
  std::vector<double> x0{1.0, -1.0};
  auto same = recon_equivalence_check(s, 500, x0, x0, 20000, rng);
  EXPECT_NEAR(same.analytic, 2 * (1 - s.alpha_bar(499)) * 2, 1e-15);
  EXPECT_LT(std::abs(same.z_score), 4.0);
  // At t = 1 the target is deterministic: every trial equals |x0 - x0_hat|^2.
  std::vector<double> off{0.0, 1.0};
  auto t1 = recon_equivalence_check(s, 1, x0, off, 10000, rng);
  EXPECT_EQ(t1.analytic, 5.0);
  EXPECT_EQ(t1.mc_mean, 5.0);
  EXPECT_EQ(t1.z_score, 0.0);
}

TEST(ReconEquivalence, RandomTriples) {
  auto s = default_schedule();
  std::mt19937_64 rng(2);
  std::vector<double> x0{2.0, 0.5}, hat{-1.0, 3.0};
  for (int t : {2, 250, 999}) {
    auto r = recon_equivalence_check(s, t, x0, hat, 1000000, rng);
    EXPECT_LT(std::abs(r.z_score), 4.0) << t;
  }
}

TEST(ReconEquivalence, Errors) {
  auto s = default_schedule();
  std::mt19937_64 rng(1);
  std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(recon_equivalence_check(s, 5, a, a, 9999, rng), ContractError);
  EXPECT_THROW(recon_equivalence_check(s, 0, a, a, 10000, rng), IndexError);
  EXPECT_THROW(recon_equivalence_check(s, 5, a, b, 10000, rng), DimensionError);
}

TEST(PointFile, RoundTripIsBitExact) {
  auto p = temp_file("roundtrip.txt");
  PointFile f{"grid25", 17, make_toy(ToySpec{}, 100, 17)};
  f.points.mutable_data()[0] = 0.1 + 0.2;
  f.points.mutable_data()[1] = -1e-300;
  write_points(p, f);
  auto back = read_points(p);
  EXPECT_EQ(back.kind, "grid25");
  EXPECT_EQ(back.seed, 17u);
  ASSERT_EQ(back.points.shape(), f.points.shape());
  EXPECT_TRUE(std::equal(back.points.data().begin(), back.points.data().end(),
                         f.points.data().begin()));
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "# ufogen-toy v1 kind=grid25 seed=17");
  std::filesystem::remove(p);
}

TEST(PointFile, MalformedInputs) {
  auto p = temp_file("bad.txt");
  auto write = [&](const std::string& text) {
    std::ofstream(p) << text;
  };
  write("");
  EXPECT_THROW(read_points(p), IoError);
  write("1\t2\n");
  EXPECT_THROW(read_points(p), IoError);
  write("# ufogen-toy v2 kind=grid25 seed=1\n1\t2\n");
  EXPECT_THROW(read_points(p), IoError);
  write("# ufogen-toy v1 kind=grid25 seed=x\n1\t2\n");
  EXPECT_THROW(read_points(p), IoError);
  write("# ufogen-toy v1 kind=grid25 seed=1\n1 2 3\n");
  EXPECT_THROW(read_points(p), IoError);
  write("# ufogen-toy v1 kind=grid25 seed=1\n1\tabc\n");
  EXPECT_THROW(read_points(p), IoError);
  std::filesystem::remove(p);
  EXPECT_THROW(read_points(p), IoError);
  EXPECT_THROW(write_points("/nonexistent/dir/p.txt", PointFile{"grid25", 0, Tensor::zeros({2, 2})}),
               IoError);
  EXPECT_THROW(write_points(p, PointFile{}), DimensionError);
}
