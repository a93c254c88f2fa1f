#pragma once

// Toy 2-D datasets, sample-quality metrics and the grid-density machinery
// used to check convolution matching numerically.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ufogen/autodiff.hpp"
#include "ufogen/schedule.hpp"

namespace ufogen {

enum class ToyKind { kGrid25, kCheckerboard, kSwissroll };

std::string_view to_string(ToyKind kind);
ToyKind parse_toy_kind(std::string_view name);

struct ToySpec {
  ToyKind kind = ToyKind::kGrid25;
  double mode_stddev = 0.05;

  // 5x5 lattice on [-4, 4]^2 with spacing 2 (grid25 only).
  std::vector<std::array<double, 2>> centers() const;
};

// n i.i.d. draws [n x 2]; a given seed always yields the same array.
Tensor make_toy(const ToySpec& spec, std::size_t n, std::uint64_t seed);

struct EvalReport {
  int modes_covered = 0;
  double high_quality_fraction = 0.0;
  double mmd = 0.0;
  std::size_t sample_count = 0;
};

// Nearest-center assignment; a sample is high quality within 3 * mode_stddev
// of its center and a mode is covered by >= max(1, n / 2500) such samples.
// Leaves mmd at 0.
EvalReport mode_metrics(const Tensor& samples, const ToySpec& spec);

enum class MmdEstimator { kUnbiased, kBiased };

// Squared MMD with k(x, y) = exp(-|x - y|^2 / (2 h^2)).
double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth,
               MmdEstimator estimator = MmdEstimator::kUnbiased);

// Median pairwise distance of `reference` (at most the first 1000 rows).
double median_heuristic_bandwidth(const Tensor& reference);

// mode_metrics plus the MMD against a fixed reference draw from `spec`.
EvalReport evaluate(const Tensor& samples, const ToySpec& spec);

// Uniform 1-D or 2-D grid of non-negative cell masses summing to one.
struct GridDensity {
  std::vector<std::size_t> extents;  // {n} or {rows, cols}
  double cell_width = 1.0;
  std::vector<double> mass;

  static GridDensity from_weights(std::vector<std::size_t> extents,
                                  double cell_width,
                                  std::vector<double> weights);
  double total() const;
};

// Discrete convolution with a Gaussian kernel of stddev `sigma` (in grid
// coordinates), truncated at 6 sigma and renormalized; output renormalized.
GridDensity convolve_density(const GridDensity& p, double sigma);

// Jensen-Shannon divergence (natural log), 0 log 0 := 0.
double jsd_grid(const GridDensity& p, const GridDensity& q);

double l1_distance(const GridDensity& p, const GridDensity& q);

struct ReconEquivalence {
  double mc_mean = 0.0;
  double analytic = 0.0;
  double z_score = 0.0;
};

// Monte-Carlo mean of |x'_{t-1} - x_{t-1}|^2 over independent forward noises
// vs alpha_bar[t-1] |x0 - x0_hat|^2 + 2 (1 - alpha_bar[t-1]) d.
ReconEquivalence recon_equivalence_check(const NoiseSchedule& s, int t,
                                         std::span<const double> x0,
                                         std::span<const double> x0_hat,
                                         std::size_t trials,
                                         std::mt19937_64& rng);

// Plain-text point sets: header "# ufogen-toy v1 kind=<kind> seed=<seed>"
// followed by "x<TAB>y" rows.
struct PointFile {
  std::string kind = "grid25";
  std::uint64_t seed = 0;
  Tensor points;
};

void write_points(const std::filesystem::path& path, const PointFile& file);
PointFile read_points(const std::filesystem::path& path);

}  // namespace ufogen
