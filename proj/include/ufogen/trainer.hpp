#pragma once

// Alternating discriminator/generator training with Adam, linear warm-up,
// generator gradient clipping, EMA, and binary checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ufogen/config.hpp"
#include "ufogen/networks.hpp"
#include "ufogen/objectives.hpp"
#include "ufogen/schedule.hpp"

namespace ufogen {

struct AdamMoments {
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamMoments zeros_like(const std::vector<Tensor>& params);
  AdamMoments clone() const;
};

struct TrainState {
  TrainState(const TrainConfig& cfg);

  std::int64_t step = 0;
  ModelPair models;
  AdamMoments adam_g;
  AdamMoments adam_d;
  std::mt19937_64 rng;

  TrainState clone() const;
};

struct MetricsRecord {
  std::int64_t step = 0;
  ObjectiveKind objective = ObjectiveKind::kUfogen;
  LossBreakdown losses;
  double lr = 0.0;
};

// (t, t_prev) per cfg.time_sampling.
std::pair<int, int> sample_time(const TrainConfig& cfg, std::mt19937_64& rng);

// lr_peak * min(1, step / warmup_steps).
double warmup_lr(std::int64_t step, const TrainConfig& cfg);

// One Adam update; `lr` already includes warm-up. `step` is 1-based.
void adam_update(std::vector<Tensor>& params, AdamMoments& moments, double lr,
                 double beta1, double beta2, double eps, std::int64_t step);

// Scales grads so their global L2 norm is at most `max_norm`; returns the
// pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

double grad_norm(const std::vector<Tensor>& params);

// Training dataset implied by the config (data.kind, data.size, seed).
Tensor training_dataset(const TrainConfig& cfg);

// One D update followed by one G update on the same draw, then EMA.
// Throws DivergenceError (carrying the step index) on a non-finite loss,
// parameter or optimizer moment.
LossBreakdown train_step(TrainState& state, const TrainConfig& cfg,
                         const NoiseSchedule& s, const Tensor& dataset);

struct RunHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const TrainState&)> on_checkpoint;
  // Receives the last snapshot known to be finite before rethrowing.
  std::function<void(const TrainState&)> on_divergence;
};

// Continues `state` until cfg.total_steps. A metrics record is emitted when
// the step counter hits a multiple of metrics_every, a checkpoint at multiples
// of checkpoint_every and at the final step.
void run(TrainState& state, const TrainConfig& cfg, const Tensor& dataset,
         const RunHooks& hooks = {});

// Fresh state + run.
TrainState run(const TrainConfig& cfg, const Tensor& dataset,
               const RunHooks& hooks = {});

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const TrainConfig& cfg, const TrainState& state);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainConfig& cfg, const TrainState& state,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

}  // namespace ufogen
