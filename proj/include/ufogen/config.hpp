#pragma once

// Flat "dotted.key = value" configuration files.
//
//   # comment
//   objective.kind = ufogen
//   trainer.step_size = 250
//   network.generator_hidden = 256,256,256,256
//
// Every key must be known; unknown keys, duplicates and malformed values are
// ConfigErrors naming the key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ufogen/data_eval.hpp"
#include "ufogen/networks.hpp"
#include "ufogen/objectives.hpp"

namespace ufogen {

// How (t, t_prev) pairs are drawn.
//   kCoarse:  t ~ U{1..T}, t_prev = max(0, t - S)
//   kPrevUniform: t_prev ~ U{0..T-1}, t = min(T, t_prev + S)
enum class TimeSampling { kCoarse, kPrevUniform };

// Whether one (t, t_prev) pair serves the whole batch or each row draws its own.
enum class TimeSharing { kBatch, kSample };

struct TrainConfig {
  // objective.*
  ObjectiveKind objective = ObjectiveKind::kUfogen;
  double lambda_kl = 1.0;
  GammaMode gamma_mode = GammaMode::kConstant;
  DiscriminatorTime discriminator_time = DiscriminatorTime::kPrevious;

  // schedule.*
  int schedule_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  // network.*
  std::vector<std::size_t> generator_hidden{256, 256, 256, 256};
  std::vector<std::size_t> discriminator_hidden{256, 256, 256};
  std::size_t time_embedding_dim = 64;
  double leaky_slope = 0.2;

  // trainer.*
  int step_size = 250;
  std::size_t batch_size = 512;
  double lr_peak = 1e-4;
  std::int64_t warmup_steps = 1000;
  double adam_beta1_g = 0.9;
  double adam_beta2_g = 0.999;
  double adam_beta1_d = 0.0;
  double adam_beta2_d = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_g = 1.0;
  double ema_decay = 0.999;
  std::int64_t total_steps = 30000;
  std::int64_t metrics_every = 500;
  std::int64_t checkpoint_every = 10000;
  TimeSampling time_sampling = TimeSampling::kCoarse;
  TimeSharing time_sharing = TimeSharing::kBatch;
  std::uint64_t seed = 0;

  // data.*
  ToyKind data_kind = ToyKind::kGrid25;
  double mode_stddev = 0.05;
  std::size_t dataset_size = 100000;

  // eval.* (used by ablate)
  std::size_t eval_samples = 10000;
  int eval_sample_steps = 1;
  bool eval_use_ema = true;
};

std::string_view to_string(GammaMode mode);
std::string_view to_string(DiscriminatorTime mode);
std::string_view to_string(TimeSampling mode);
std::string_view to_string(TimeSharing mode);

// Throws ConfigError when an invariant is violated.
void validate(const TrainConfig& cfg);

TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);

// Canonical text listing every key in a fixed order; parse_config round-trips it.
std::string format_config(const TrainConfig& cfg);

// FNV-1a over the canonical text.
std::uint64_t config_hash(const TrainConfig& cfg);

Architecture architecture_of(const TrainConfig& cfg);
ObjectiveSettings objective_settings(const TrainConfig& cfg);
ToySpec toy_spec(const TrainConfig& cfg);

}  // namespace ufogen
