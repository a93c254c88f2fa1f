#pragma once

// Numerical verification of the closed-form pieces: Gaussian KL against
// Monte Carlo, convolution matching on grids, the reconstruction identity,
// gradients against central differences, and marginal-vs-composed moments.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ufogen {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  // "<" passes when measured < tolerance, ">" when measured > tolerance.
  std::string relation = "<";
  double tolerance = 0.0;
  bool pass = false;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Multiplies the closed-form KL before comparison (fault injection).
  double kl_scale = 1.0;
  std::size_t kl_samples = 1000000;
  std::size_t recon_trials = 1000000;
  std::size_t marginal_draws = 100000;
};

std::vector<CheckResult> check_gaussian_kl(const VerifyOptions& opts);
std::vector<CheckResult> check_convolution_matching(const VerifyOptions& opts);
std::vector<CheckResult> check_recon_equivalence(const VerifyOptions& opts);
std::vector<CheckResult> check_op_gradients(const VerifyOptions& opts);
std::vector<CheckResult> check_loss_gradients(const VerifyOptions& opts);
std::vector<CheckResult> check_marginal_consistency(const VerifyOptions& opts);

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts);

bool all_pass(const std::vector<CheckResult>& rows);

// CSV: check,measured,relation,tolerance,verdict
std::string format_verify_report(const std::vector<CheckResult>& rows);

}  // namespace ufogen
