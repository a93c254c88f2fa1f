#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ufogen/autodiff.hpp"

namespace ufogen {

enum class Activation { kSilu, kLeakyRelu };

// Sinusoidal embedding of a discrete index t in [0, T], scaled to t / T.
class TimeEmbedding {
 public:
  TimeEmbedding(std::size_t dim, int schedule_steps);

  std::size_t dim() const { return dim_; }
  // [n x dim], one row per index.
  Tensor embed(std::span<const int> t) const;

 private:
  std::size_t dim_;
  int steps_;
  std::vector<double> freqs_;
};

struct Architecture {
  std::size_t data_dim = 2;
  std::vector<std::size_t> generator_hidden{256, 256, 256, 256};
  std::vector<std::size_t> discriminator_hidden{256, 256, 256};
  std::size_t time_embedding_dim = 64;
  double leaky_slope = 0.2;
  // DDGAN's discriminator also sees x_t.
  bool discriminator_takes_xt = false;
};

// Fully connected stack: params are [W0, b0, W1, b1, ...] with W_i of shape
// [in x out] and b_i of shape [1 x out]. The activation follows every layer
// except the last.
struct Mlp {
  std::vector<Tensor> params;
  Activation activation = Activation::kSilu;
  double leaky_slope = 0.2;

  Tensor forward(const Tensor& input) const;
  Tensor forward(std::span<const Tensor> with_params,
                 const Tensor& input) const;
};

// Layer widths in -> hidden... -> out, weights ~ U(-1/sqrt(in), 1/sqrt(in)).
Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden,
             std::size_t out, Activation act, double leaky_slope,
             std::mt19937_64& rng, bool zero_last_layer);

// Generator G(x_t, t) -> x0_hat, discriminator D(x, t[, x_t]) -> logit, and
// the EMA shadow of the generator.
class ModelPair {
 public:
  ModelPair(Architecture arch, int schedule_steps, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  const TimeEmbedding& time_embedding() const { return embedding_; }
  int schedule_steps() const { return steps_; }

  Mlp& generator() { return generator_; }
  const Mlp& generator() const { return generator_; }
  Mlp& discriminator() { return discriminator_; }
  const Mlp& discriminator() const { return discriminator_; }
  std::vector<Tensor>& ema_params() { return ema_; }
  const std::vector<Tensor>& ema_params() const { return ema_; }

  // Named views, in a stable order, for checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  // Independent copy of all parameters (no shared storage).
  ModelPair clone() const;

 private:
  Architecture arch_;
  int steps_;
  TimeEmbedding embedding_;
  Mlp generator_;
  Mlp discriminator_;
  std::vector<Tensor> ema_;
};

// x0_hat = G([x_t, emb(t)]). Throws DimensionError on width mismatch and
// IndexError if t is outside [0, T].
Tensor generator_forward(const ModelPair& m, const Tensor& x_t, int t,
                         bool use_ema = false);
Tensor generator_forward(const ModelPair& m, const Tensor& x_t,
                         std::span<const int> t, bool use_ema = false);

// logit = D([x, (x_t), emb(t)]). `extra` must be present iff the architecture
// is conditional on x_t.
Tensor discriminator_forward(const ModelPair& m, const Tensor& x, int t,
                             const std::optional<Tensor>& extra = std::nullopt);
Tensor discriminator_forward(const ModelPair& m, const Tensor& x,
                             std::span<const int> t,
                             const std::optional<Tensor>& extra = std::nullopt);

// ema <- decay * ema + (1 - decay) * theta.
void ema_update(ModelPair& m, double decay);

}  // namespace ufogen
