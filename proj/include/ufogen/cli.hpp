#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ufogen/data_eval.hpp"

namespace ufogen {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitIo = 4,
};

// Entry point for `ufogen <train|sample|eval|verify|plot|ablate> [flags]`.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

// UFOGEN_SEED, if set. Throws ConfigError when it is not an unsigned integer.
std::optional<std::uint64_t> seed_from_env();

struct PlotPanel {
  std::string title;
  Tensor points;
};

// Self-contained SVG: one square panel per entry over the fixed window
// [-5, 5]^2, grid25 centers as rings (when `spec` is grid25), samples as dots.
std::string render_svg(const std::vector<PlotPanel>& panels, const ToySpec& spec);

}  // namespace ufogen
