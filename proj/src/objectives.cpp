#include "ufogen/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace ufogen {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kDdpm:
      return "ddpm";
    case ObjectiveKind::kDdgan:
      return "ddgan";
    case ObjectiveKind::kSiddm:
      return "siddm";
    case ObjectiveKind::kUfogen:
      return "ufogen";
  }
  return "?";
}

ObjectiveKind parse_objective(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lower == "ddpm") return ObjectiveKind::kDdpm;
  if (lower == "ddgan") return ObjectiveKind::kDdgan;
  if (lower == "siddm") return ObjectiveKind::kSiddm;
  if (lower == "ufogen") return ObjectiveKind::kUfogen;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

Parameterization parameterization_of(ObjectiveKind kind) {
  return kind == ObjectiveKind::kUfogen ? Parameterization::kForward
                                        : Parameterization::kPosterior;
}

bool is_adversarial(ObjectiveKind kind) { return kind != ObjectiveKind::kDdpm; }

bool discriminator_takes_xt(ObjectiveKind kind) {
  return kind == ObjectiveKind::kDdgan;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = normal(rng);
  return Tensor::from({rows, cols}, std::move(v));
}

Tensor parameterize_prev(ObjectiveKind kind, const NoiseSchedule& s,
                         const Tensor& x0_hat, const Tensor& x_t,
                         std::span<const int> t, std::span<const int> t_prev,
                         const Tensor& noise) {
  if (parameterization_of(kind) == Parameterization::kForward) {
    return marginal_sample(s, x0_hat, t_prev, noise);
  }
  return sample_gaussian(posterior_params(s, x_t, x0_hat, t, t_prev), noise);
}

Tensor parameterize_prev(ObjectiveKind kind, const NoiseSchedule& s,
                         const Tensor& x0_hat, const Tensor& x_t, int t,
                         const Tensor& noise) {
  s.check_index(t, 1);
  const std::vector<int> ts(x0_hat.rows(), t), tp(x0_hat.rows(), t - 1);
  return parameterize_prev(kind, s, x0_hat, x_t, ts, tp, noise);
}

Tensor discriminator_loss(const Tensor& logits_real,
                          const Tensor& logits_fake) {
  if (logits_real.shape() != logits_fake.shape()) {
    throw DimensionError("discriminator_loss: real/fake batch shapes differ");
  }
  return add(mean(softplus(neg(logits_real))), mean(softplus(logits_fake)));
}

Tensor generator_adversarial_loss(const Tensor& logits_fake) {
  return mean(softplus(neg(logits_fake)));
}

Tensor reconstruction_loss(ObjectiveKind kind, const NoiseSchedule& s,
                           const Tensor& x0, const Tensor& x0_hat,
                           const Tensor& x_prev, const Tensor& x_prev_hat,
                           std::span<const int> t, std::span<const int> t_prev,
                           GammaMode gamma_mode) {
  if (t.size() != x0.rows() || t_prev.size() != x0.rows()) {
    throw DimensionError("reconstruction_loss: one time index per row");
  }
  std::vector<double> w(t.size(), 1.0);
  switch (kind) {
    case ObjectiveKind::kDdpm:
      return mean(squared_l2_norm(sub(x0, x0_hat), 1));
    case ObjectiveKind::kUfogen:
      for (std::size_t i = 0; i < t.size(); ++i)
        w[i] = gamma(s, t[i], t_prev[i], gamma_mode);
      return mean(mul(squared_l2_norm(sub(x0, x0_hat), 1), column(w)));
    case ObjectiveKind::kSiddm:
      for (std::size_t i = 0; i < t.size(); ++i)
        w[i] = reconstruction_weight(s, t[i], t_prev[i]);
      return mean(mul(squared_l2_norm(sub(x_prev_hat, x_prev), 1), column(w)));
    case ObjectiveKind::kDdgan:
      break;
  }
  throw ContractError("DDGAN has no reconstruction term");
}

Tensor reconstruction_loss(ObjectiveKind kind, const NoiseSchedule& s,
                           const Tensor& x0, const Tensor& x0_hat,
                           const Tensor& x_prev, const Tensor& x_prev_hat,
                           int t, GammaMode gamma_mode) {
  s.check_index(t, 1);
  const std::vector<int> ts(x0.rows(), t), tp(x0.rows(), t - 1);
  return reconstruction_loss(kind, s, x0, x0_hat, x_prev, x_prev_hat, ts, tp,
                             gamma_mode);
}

DiffusionDraw draw_diffusion(const NoiseSchedule& s, const Tensor& x0,
                             std::vector<int> t, std::vector<int> t_prev,
                             std::mt19937_64& rng) {
  const std::size_t n = x0.rows(), d = x0.cols();
  DiffusionDraw draw;
  draw.x0 = x0;
  const Tensor eps_prev = normal_tensor(n, d, rng);
  const Tensor eps_t = normal_tensor(n, d, rng);
  draw.fake_noise = normal_tensor(n, d, rng);
  draw.x_prev = marginal_sample(s, x0, t_prev, eps_prev);
  draw.x_t = transition_sample(s, draw.x_prev, t, t_prev, eps_t);
  draw.t = std::move(t);
  draw.t_prev = std::move(t_prev);
  return draw;
}

GeneratorPass run_generator(const ObjectiveSettings& obj, const NoiseSchedule& s,
                            const ModelPair& m, const DiffusionDraw& draw) {
  GeneratorPass pass;
  pass.x0_hat = generator_forward(m, draw.x_t, draw.t);
  pass.x_prev_hat = parameterize_prev(obj.kind, s, pass.x0_hat, draw.x_t,
                                      draw.t, draw.t_prev, draw.fake_noise);
  return pass;
}

Tensor discriminator_logits(const ObjectiveSettings& obj, const ModelPair& m,
                            const DiffusionDraw& draw, const Tensor& samples) {
  if (obj.kind == ObjectiveKind::kDdgan) {
    return discriminator_forward(m, samples, draw.t, draw.x_t);
  }
  const auto& t = obj.discriminator_time == DiscriminatorTime::kPrevious
                      ? draw.t_prev
                      : draw.t;
  return discriminator_forward(m, samples, t);
}

Tensor discriminator_objective(const ObjectiveSettings& obj, const ModelPair& m,
                               const DiffusionDraw& draw,
                               const GeneratorPass& fake) {
  if (!is_adversarial(obj.kind)) return Tensor::scalar(0.0);
  const Tensor real_logits = discriminator_logits(obj, m, draw, draw.x_prev);
  const Tensor fake_logits =
      discriminator_logits(obj, m, draw, fake.x_prev_hat.detach());
  return discriminator_loss(real_logits, fake_logits);
}

GeneratorLosses generator_objective(const ObjectiveSettings& obj,
                                    const NoiseSchedule& s, const ModelPair& m,
                                    const DiffusionDraw& draw,
                                    const GeneratorPass& fake) {
  GeneratorLosses out;
  if (obj.kind == ObjectiveKind::kDdpm) {
    out.reconstruction =
        reconstruction_loss(obj.kind, s, draw.x0, fake.x0_hat, draw.x_prev,
                            fake.x_prev_hat, draw.t, draw.t_prev);
    out.adversarial = Tensor::scalar(0.0);
    out.total = out.reconstruction;
    return out;
  }
  out.adversarial = generator_adversarial_loss(
      discriminator_logits(obj, m, draw, fake.x_prev_hat));
  if (obj.kind == ObjectiveKind::kDdgan) {
    out.reconstruction = Tensor::scalar(0.0);
    out.total = out.adversarial;
    return out;
  }
  out.reconstruction =
      reconstruction_loss(obj.kind, s, draw.x0, fake.x0_hat, draw.x_prev,
                          fake.x_prev_hat, draw.t, draw.t_prev, obj.gamma_mode);
  out.total = add(out.adversarial, scale(out.reconstruction, obj.lambda_kl));
  return out;
}

LossBreakdown build_losses(const ObjectiveSettings& obj, const NoiseSchedule& s,
                           const ModelPair& m, const Tensor& x0_batch, int t,
                           int step_size, std::mt19937_64& rng,
                           const std::optional<Tensor>& x0_override) {
  s.check_index(t, 1);
  if (step_size < 1) throw ConfigError("step size must be >= 1");
  const std::size_t n = x0_batch.rows();
  DiffusionDraw draw =
      draw_diffusion(s, x0_batch, std::vector<int>(n, t),
                     std::vector<int>(n, std::max(0, t - step_size)), rng);
  GeneratorPass fake;
  if (x0_override) {
    fake.x0_hat = *x0_override;
    fake.x_prev_hat = parameterize_prev(obj.kind, s, fake.x0_hat, draw.x_t,
                                        draw.t, draw.t_prev, draw.fake_noise);
  } else {
    fake = run_generator(obj, s, m, draw);
  }
  const Tensor d_loss = discriminator_objective(obj, m, draw, fake);
  const GeneratorLosses g = generator_objective(obj, s, m, draw, fake);

  LossBreakdown out{d_loss.item(), g.adversarial.item(),
                    g.reconstruction.item(), g.total.item()};
  for (double v : {out.d_loss, out.g_adv, out.g_recon, out.g_total}) {
    if (!std::isfinite(v)) {
      throw DivergenceError(0, "non-finite loss at t=" + std::to_string(t));
    }
  }
  return out;
}

}  // namespace ufogen
