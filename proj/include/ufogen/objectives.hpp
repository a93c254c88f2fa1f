#pragma once

// Loss construction for the four training objectives:
//
//   DDPM    x0-prediction mean squared error (no discriminator)
//   DDGAN   conditional adversarial loss, D(x_{t-1}, x_t, t), posterior sampling
//   SIDDM   marginal adversarial loss + weighted x_{t-1} reconstruction,
//           posterior sampling
//   UFOGEN  marginal adversarial loss + clean-sample reconstruction,
//           forward-marginal sampling
//
// Log-probabilities are always computed from logits through softplus.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ufogen/autodiff.hpp"
#include "ufogen/networks.hpp"
#include "ufogen/schedule.hpp"

namespace ufogen {

enum class ObjectiveKind { kDdpm, kDdgan, kSiddm, kUfogen };

enum class Parameterization { kPosterior, kForward };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view name);

Parameterization parameterization_of(ObjectiveKind kind);
bool is_adversarial(ObjectiveKind kind);
bool discriminator_takes_xt(ObjectiveKind kind);

// Which index the marginal discriminator is conditioned on: the noise level
// of its input (t-1) or the generator's index (t).
enum class DiscriminatorTime { kPrevious, kCurrent };

struct LossBreakdown {
  double d_loss = 0.0;
  double g_adv = 0.0;
  // Reconstruction term as it enters the generator loss before lambda_KL,
  // with the per-row time weights (gamma_t or the x_{t-1} weight) applied.
  double g_recon = 0.0;
  double g_total = 0.0;
};

struct ObjectiveSettings {
  ObjectiveKind kind = ObjectiveKind::kUfogen;
  double lambda_kl = 1.0;
  GammaMode gamma_mode = GammaMode::kConstant;
  DiscriminatorTime discriminator_time = DiscriminatorTime::kPrevious;
};

// Draws x'_{t_prev} from x0_hat: posterior q(x_{t_prev} | x_t, x0_hat) for
// DDGAN/SIDDM, forward marginal q(x_{t_prev} | x0_hat) for UFOGEN. Rows with
// t_prev = 0 return x0_hat exactly.
Tensor parameterize_prev(ObjectiveKind kind, const NoiseSchedule& s,
                         const Tensor& x0_hat, const Tensor& x_t,
                         std::span<const int> t, std::span<const int> t_prev,
                         const Tensor& noise);
Tensor parameterize_prev(ObjectiveKind kind, const NoiseSchedule& s,
                         const Tensor& x0_hat, const Tensor& x_t, int t,
                         const Tensor& noise);

// mean(softplus(-real) + softplus(fake)).
Tensor discriminator_loss(const Tensor& logits_real, const Tensor& logits_fake);

// Non-saturating generator loss: mean(softplus(-fake)).
Tensor generator_adversarial_loss(const Tensor& logits_fake);

// SIDDM: mean_i w(t_i, t_prev_i) |x'_prev - x_prev|^2.
// UFOGEN: mean_i gamma(t_i, t_prev_i) |x0 - x0_hat|^2.
// DDPM:   mean_i |x0 - x0_hat|^2.
Tensor reconstruction_loss(ObjectiveKind kind, const NoiseSchedule& s,
                           const Tensor& x0, const Tensor& x0_hat,
                           const Tensor& x_prev, const Tensor& x_prev_hat,
                           std::span<const int> t, std::span<const int> t_prev,
                           GammaMode gamma_mode = GammaMode::kConstant);
Tensor reconstruction_loss(ObjectiveKind kind, const NoiseSchedule& s,
                           const Tensor& x0, const Tensor& x0_hat,
                           const Tensor& x_prev, const Tensor& x_prev_hat,
                           int t, GammaMode gamma_mode = GammaMode::kConstant);

// One draw of the forward process for a training step.
struct DiffusionDraw {
  Tensor x0;
  Tensor x_prev;  // x_{t-1} ~ q(. | x0)
  Tensor x_t;     // x_t ~ q(. | x_{t-1})
  std::vector<int> t;
  std::vector<int> t_prev;
  Tensor fake_noise;  // noise for x'_{t-1}
};

// Standard normal [rows x cols] from `rng`.
Tensor normal_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

DiffusionDraw draw_diffusion(const NoiseSchedule& s, const Tensor& x0,
                             std::vector<int> t, std::vector<int> t_prev,
                             std::mt19937_64& rng);

// Generator side of a step: x0_hat, the fake x'_{t-1} and the inputs the
// discriminator sees for real and fake samples.
struct GeneratorPass {
  Tensor x0_hat;
  Tensor x_prev_hat;
};

GeneratorPass run_generator(const ObjectiveSettings& obj, const NoiseSchedule& s,
                            const ModelPair& m, const DiffusionDraw& draw);

// Discriminator logits for a sample set under the objective's conditioning.
Tensor discriminator_logits(const ObjectiveSettings& obj, const ModelPair& m,
                            const DiffusionDraw& draw, const Tensor& samples);

// d_loss with the fake branch detached from the generator.
Tensor discriminator_objective(const ObjectiveSettings& obj, const ModelPair& m,
                               const DiffusionDraw& draw,
                               const GeneratorPass& fake);

struct GeneratorLosses {
  Tensor total;
  Tensor adversarial;
  Tensor reconstruction;
};

GeneratorLosses generator_objective(const ObjectiveSettings& obj,
                                    const NoiseSchedule& s, const ModelPair& m,
                                    const DiffusionDraw& draw,
                                    const GeneratorPass& fake);

// Samples x_{t-1}, x_t per the training recipe at a shared index t (t_prev is
// max(0, t - step_size)), runs the generator and evaluates every loss term.
// `x0_override` replaces the generator output (oracle injection for tests).
// Throws DivergenceError on a non-finite component.
LossBreakdown build_losses(const ObjectiveSettings& obj, const NoiseSchedule& s,
                           const ModelPair& m, const Tensor& x0_batch, int t,
                           int step_size, std::mt19937_64& rng,
                           const std::optional<Tensor>& x0_override = {});

}  // namespace ufogen
