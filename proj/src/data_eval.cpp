#include "ufogen/data_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "ufogen/errors.hpp"

namespace ufogen {

namespace {

constexpr std::uint64_t kReferenceSeed = 0x5EEDF00DULL;
constexpr std::size_t kMmdRows = 2000;

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

void require_points(const Tensor& x, const char* what) {
  if (x.rank() != 2 || x.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty [n x d] array");
  }
}

Tensor head_rows(const Tensor& x, std::size_t n) {
  if (x.rows() <= n) return x;
  const auto src = x.data();
  return Tensor::from({n, x.cols()},
                      std::vector<double>(src.begin(), src.begin() + n * x.cols()));
}

std::vector<double> gaussian_kernel(double sigma, double cell_width) {
  const auto radius = static_cast<long>(std::floor(6.0 * sigma / cell_width));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double x = static_cast<double>(i) * cell_width / sigma;
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * x * x);
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Convolves `count` lines of length `len` laid out with the given strides.
void convolve_lines(const std::vector<double>& in, std::vector<double>& out,
                    std::size_t len, std::size_t count, std::size_t stride,
                    std::size_t line_step, const std::vector<double>& kernel) {
  const long radius = static_cast<long>(kernel.size() / 2);
  for (std::size_t line = 0; line < count; ++line) {
    const std::size_t base = line * line_step;
    for (std::size_t i = 0; i < len; ++i) {
      const double m = in[base + i * stride];
      if (m == 0.0) continue;
      const long lo = std::max(0L, static_cast<long>(i) - radius);
      const long hi = std::min(static_cast<long>(len) - 1, static_cast<long>(i) + radius);
      for (long j = lo; j <= hi; ++j) {
        out[base + static_cast<std::size_t>(j) * stride] +=
            m * kernel[static_cast<std::size_t>(j - static_cast<long>(i) + radius)];
      }
    }
  }
}

}  // namespace

std::string_view to_string(ToyKind kind) {
  switch (kind) {
    case ToyKind::kGrid25:
      return "grid25";
    case ToyKind::kCheckerboard:
      return "checkerboard";
    case ToyKind::kSwissroll:
      return "swissroll";
  }
  return "?";
}

ToyKind parse_toy_kind(std::string_view name) {
  if (name == "grid25") return ToyKind::kGrid25;
  if (name == "checkerboard") return ToyKind::kCheckerboard;
  if (name == "swissroll") return ToyKind::kSwissroll;
  throw ConfigError("unknown toy kind '" + std::string(name) + "'");
}

std::vector<std::array<double, 2>> ToySpec::centers() const {
  std::vector<std::array<double, 2>> c;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) c.push_back({-4.0 + 2.0 * i, -4.0 + 2.0 * j});
  }
  return c;
}

Tensor make_toy(const ToySpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractError("make_toy: n must be >= 1");
  if (!(spec.mode_stddev > 0.0)) throw ConfigError("mode stddev must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  std::vector<double> out(2 * n);
  switch (spec.kind) {
    case ToyKind::kGrid25: {
      const auto centers = spec.centers();
      std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centers[pick(rng)];
        out[2 * i] = c[0] + spec.mode_stddev * normal(rng);
        out[2 * i + 1] = c[1] + spec.mode_stddev * normal(rng);
      }
      break;
    }
    case ToyKind::kCheckerboard: {
      // 4x4 board on [-4, 4]^2, samples on alternating cells.
      std::uniform_int_distribution<int> coin(0, 1);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = unit(rng) * 4.0 - 2.0;
        const double y = unit(rng) - 2.0 * coin(rng);
        out[2 * i] = 2.0 * x;
        out[2 * i + 1] = 2.0 * (y + std::fmod(std::floor(x) + 4.0, 2.0));
      }
      break;
    }
    case ToyKind::kSwissroll: {
      const double turn = 4.5 * std::numbers::pi;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * unit(rng));
        out[2 * i] = 4.0 * t * std::cos(t) / turn + spec.mode_stddev * normal(rng);
        out[2 * i + 1] = 4.0 * t * std::sin(t) / turn + spec.mode_stddev * normal(rng);
      }
      break;
    }
  }
  return Tensor::from({n, 2}, std::move(out));
}

EvalReport mode_metrics(const Tensor& samples, const ToySpec& spec) {
  require_points(samples, "mode_metrics");
  if (samples.cols() != 2) throw DimensionError("mode_metrics: samples must be 2-D");
  if (spec.kind != ToyKind::kGrid25) {
    throw ConfigError("mode metrics are defined for grid25 only");
  }
  const auto centers = spec.centers();
  const std::size_t n = samples.rows();
  const double radius = 3.0 * spec.mode_stddev;
  std::vector<std::size_t> hits(centers.size(), 0);
  std::size_t hq = 0;
  const auto x = samples.data();
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d2 = sq_dist(&x[2 * i], centers[c].data(), 2);
      if (d2 < best) {
        best = d2;
        arg = c;
      }
    }
    if (std::sqrt(best) <= radius) {
      ++hits[arg];
      ++hq;
    }
  }
  const std::size_t need = std::max<std::size_t>(1, n / 2500);
  EvalReport r;
  r.sample_count = n;
  r.high_quality_fraction = static_cast<double>(hq) / static_cast<double>(n);
  r.modes_covered = static_cast<int>(
      std::count_if(hits.begin(), hits.end(), [need](std::size_t h) { return h >= need; }));
  return r;
}

double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth,
               MmdEstimator estimator) {
  require_points(a, "mmd_rbf");
  require_points(b, "mmd_rbf");
  if (a.cols() != b.cols()) throw DimensionError("mmd_rbf: dimension mismatch");
  if (!(bandwidth > 0.0)) throw ContractError("mmd_rbf: bandwidth must be > 0");
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  if (estimator == MmdEstimator::kUnbiased && (m < 2 || n < 2)) {
    throw ContractError("mmd_rbf: unbiased estimate needs >= 2 rows per set");
  }
  const double inv = -1.0 / (2.0 * bandwidth * bandwidth);
  const auto pa = a.data(), pb = b.data();
  auto within = [&](std::span<const double> x, std::size_t rows) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = i + 1; j < rows; ++j) {
        s += std::exp(inv * sq_dist(&x[i * d], &x[j * d], d));
      }
    }
    // Off-diagonal sum counts each pair twice; the diagonal is all ones.
    if (estimator == MmdEstimator::kUnbiased) {
      return 2.0 * s / (static_cast<double>(rows) * static_cast<double>(rows - 1));
    }
    return (2.0 * s + static_cast<double>(rows)) /
           (static_cast<double>(rows) * static_cast<double>(rows));
  };
  double cross = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cross += std::exp(inv * sq_dist(&pa[i * d], &pb[j * d], d));
    }
  }
  cross /= static_cast<double>(m) * static_cast<double>(n);
  return within(pa, m) + within(pb, n) - 2.0 * cross;
}

double median_heuristic_bandwidth(const Tensor& reference) {
  require_points(reference, "median_heuristic_bandwidth");
  const std::size_t n = std::min<std::size_t>(reference.rows(), 1000);
  if (n < 2) throw ContractError("median heuristic needs >= 2 rows");
  const std::size_t d = reference.cols();
  const auto x = reference.data();
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist.push_back(std::sqrt(sq_dist(&x[i * d], &x[j * d], d)));
    }
  }
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  if (!(*mid > 0.0)) throw ContractError("median heuristic: degenerate reference set");
  return *mid;
}

EvalReport evaluate(const Tensor& samples, const ToySpec& spec) {
  EvalReport r = mode_metrics(samples, spec);
  const Tensor reference = make_toy(spec, kMmdRows, kReferenceSeed);
  const Tensor head = head_rows(samples, kMmdRows);
  if (head.rows() >= 2) {
    r.mmd = std::max(0.0, mmd_rbf(head, reference,
                                  median_heuristic_bandwidth(reference)));
  }
  return r;
}

GridDensity GridDensity::from_weights(std::vector<std::size_t> extents,
                                      double cell_width,
                                      std::vector<double> weights) {
  if (extents.empty() || extents.size() > 2) {
    throw DimensionError("grid density must be 1-D or 2-D");
  }
  std::size_t cells = 1;
  for (auto e : extents) cells *= e;
  if (cells == 0 || cells != weights.size()) {
    throw DimensionError("grid density: extents do not match weight count");
  }
  if (!(cell_width > 0.0)) throw ContractError("grid density: cell width must be > 0");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ContractError("grid density: weights must be finite and >= 0");
    }
    total += w;
  }
  if (!(total > 0.0)) throw ContractError("grid density: zero total mass");
  for (auto& w : weights) w /= total;
  return GridDensity{std::move(extents), cell_width, std::move(weights)};
}

double GridDensity::total() const {
  double s = 0.0;
  for (double m : mass) s += m;
  return s;
}

GridDensity convolve_density(const GridDensity& p, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("convolve_density: sigma must be > 0");
  const auto kernel = gaussian_kernel(sigma, p.cell_width);
  std::vector<double> out(p.mass.size(), 0.0);
  if (p.extents.size() == 1) {
    convolve_lines(p.mass, out, p.extents[0], 1, 1, 0, kernel);
  } else {
    const std::size_t rows = p.extents[0], cols = p.extents[1];
    std::vector<double> tmp(p.mass.size(), 0.0);
    convolve_lines(p.mass, tmp, cols, rows, 1, cols, kernel);
    convolve_lines(tmp, out, rows, cols, cols, 1, kernel);
  }
  return GridDensity::from_weights(p.extents, p.cell_width, std::move(out));
}

double jsd_grid(const GridDensity& p, const GridDensity& q) {
  if (p.extents != q.extents || p.cell_width != q.cell_width) {
    throw DimensionError("jsd_grid: densities live on different grids");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double a = p.mass[i], b = q.mass[i];
    const double m = 0.5 * (a + b);
    if (a > 0.0) s += 0.5 * a * std::log(a / m);
    if (b > 0.0) s += 0.5 * b * std::log(b / m);
  }
  return std::max(0.0, s);
}

double l1_distance(const GridDensity& p, const GridDensity& q) {
  if (p.extents != q.extents) throw DimensionError("l1_distance: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) s += std::abs(p.mass[i] - q.mass[i]);
  return s;
}

ReconEquivalence recon_equivalence_check(const NoiseSchedule& s, int t,
                                         std::span<const double> x0,
                                         std::span<const double> x0_hat,
                                         std::size_t trials,
                                         std::mt19937_64& rng) {
  s.check_index(t, 1);
  if (x0.size() != x0_hat.size() || x0.empty()) {
    throw DimensionError("recon_equivalence_check: x0 and x0_hat must match");
  }
  if (trials < 10000) throw ContractError("recon_equivalence_check: trials >= 10^4");
  const std::size_t d = x0.size();
  const double ab = s.alpha_bar(t - 1);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::normal_distribution<double> normal;

  double mismatch = 0.0;
  for (std::size_t j = 0; j < d; ++j) mismatch += (x0[j] - x0_hat[j]) * (x0[j] - x0_hat[j]);

  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 1; k <= trials; ++k) {
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double real = a * x0[j] + b * normal(rng);
      const double fake = a * x0_hat[j] + b * normal(rng);
      v += (fake - real) * (fake - real);
    }
    const double delta = v - mean;
    mean += delta / static_cast<double>(k);
    m2 += delta * (v - mean);
  }
  ReconEquivalence r;
  r.mc_mean = mean;
  r.analytic = ab * mismatch + 2.0 * (1.0 - ab) * static_cast<double>(d);
  const double se = std::sqrt(m2 / static_cast<double>(trials - 1) / static_cast<double>(trials));
  const double diff = r.mc_mean - r.analytic;
  if (se > 0.0) {
    r.z_score = diff / se;
  } else if (diff != 0.0) {
    r.z_score = std::copysign(std::numeric_limits<double>::infinity(), diff);
  }
  return r;
}

void write_points(const std::filesystem::path& path, const PointFile& file) {
  if (file.points.rank() != 2 || file.points.cols() != 2) {
    throw DimensionError("point files hold [n x 2] arrays");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# ufogen-toy v1 kind=" << file.kind << " seed=" << file.seed << '\n';
  const auto x = file.points.data();
  char buf[64];
  for (std::size_t i = 0; i < file.points.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\n", x[2 * i], x[2 * i + 1]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

PointFile read_points(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  PointFile file;
  {
    std::istringstream header(line);
    std::string hash, tag, version, kind, seed;
    header >> hash >> tag >> version >> kind >> seed;
    if (hash != "#" || tag != "ufogen-toy") {
      throw IoError(path.string() + ": missing '# ufogen-toy' header");
    }
    if (version != "v1") throw IoError(path.string() + ": unsupported version " + version);
    if (kind.rfind("kind=", 0) != 0 || seed.rfind("seed=", 0) != 0) {
      throw IoError(path.string() + ": header needs kind= and seed= fields");
    }
    file.kind = kind.substr(5);
    try {
      file.seed = std::stoull(seed.substr(5));
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad seed field");
    }
  }
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected x<TAB>y");
    }
    char* end = nullptr;
    const double x = std::strtod(line.c_str(), &end);
    const bool x_ok = end == line.c_str() + tab;
    const char* ys = line.c_str() + tab + 1;
    const double y = std::strtod(ys, &end);
    const bool y_ok = end != ys && (*end == '\0' || *end == '\r');
    if (!x_ok || !y_ok) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    values.push_back(x);
    values.push_back(y);
  }
  const std::size_t n = values.size() / 2;
  file.points = Tensor::from({n, 2}, std::move(values));
  return file;
}

}  // namespace ufogen
