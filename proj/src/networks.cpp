#include "ufogen/networks.hpp"

#include <cmath>
#include <string>

namespace ufogen {

TimeEmbedding::TimeEmbedding(std::size_t dim, int schedule_steps)
    : dim_(dim), steps_(schedule_steps) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dimension must be even and positive");
  }
  if (schedule_steps < 1) throw ConfigError("schedule length must be >= 1");
  const std::size_t half = dim / 2;
  freqs_.resize(half);
  for (std::size_t k = 0; k < half; ++k) {
    freqs_[k] = 1000.0 * std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                  static_cast<double>(half));
  }
}

Tensor TimeEmbedding::embed(std::span<const int> t) const {
  const std::size_t half = dim_ / 2;
  std::vector<double> out(t.size() * dim_);
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (t[r] < 0 || t[r] > steps_) {
      throw IndexError("time index " + std::to_string(t[r]) + " outside [0, " +
                       std::to_string(steps_) + "]");
    }
    const double u = static_cast<double>(t[r]) / steps_;
    for (std::size_t k = 0; k < half; ++k) {
      out[r * dim_ + k] = std::sin(u * freqs_[k]);
      out[r * dim_ + half + k] = std::cos(u * freqs_[k]);
    }
  }
  return Tensor::from({t.size(), dim_}, std::move(out));
}

Tensor Mlp::forward(const Tensor& input) const { return forward(params, input); }

Tensor Mlp::forward(std::span<const Tensor> with_params,
                    const Tensor& input) const {
  const std::size_t layers = with_params.size() / 2;
  Tensor h = input;
  for (std::size_t i = 0; i < layers; ++i) {
    const Tensor& w = with_params[2 * i];
    if (h.cols() != w.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " expects " +
                           std::to_string(w.rows()) + " inputs, got " +
                           std::to_string(h.cols()));
    }
    h = add(matmul(h, w), with_params[2 * i + 1]);
    if (i + 1 < layers) {
      h = activation == Activation::kSilu ? silu(h) : leaky_relu(h, leaky_slope);
    }
  }
  return h;
}

Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden,
             std::size_t out, Activation act, double leaky_slope,
             std::mt19937_64& rng, bool zero_last_layer) {
  Mlp mlp;
  mlp.activation = act;
  mlp.leaky_slope = leaky_slope;
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const bool last = i + 2 == widths.size();
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(fan_in * fan_out), b(fan_out);
    if (!(last && zero_last_layer)) {
      for (auto& v : w) v = u(rng);
      for (auto& v : b) v = u(rng);
    }
    mlp.params.push_back(Tensor::from({fan_in, fan_out}, std::move(w), true));
    mlp.params.push_back(Tensor::from({1, fan_out}, std::move(b), true));
  }
  return mlp;
}

ModelPair::ModelPair(Architecture arch, int schedule_steps, std::uint64_t seed)
    : arch_(std::move(arch)),
      steps_(schedule_steps),
      embedding_(arch_.time_embedding_dim, schedule_steps) {
  if (arch_.data_dim == 0) throw ConfigError("data dimension must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t d = arch_.data_dim;
  const std::size_t e = arch_.time_embedding_dim;
  generator_ = make_mlp(d + e, arch_.generator_hidden, d, Activation::kSilu,
                        arch_.leaky_slope, rng, true);
  const std::size_t disc_in = d + (arch_.discriminator_takes_xt ? d : 0) + e;
  discriminator_ = make_mlp(disc_in, arch_.discriminator_hidden, 1,
                            Activation::kLeakyRelu, arch_.leaky_slope, rng,
                            false);
  for (const auto& p : generator_.params) ema_.push_back(p.detach());
}

std::vector<std::pair<std::string, Tensor>> ModelPair::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_group = [&out](const std::string& prefix,
                          const std::vector<Tensor>& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.emplace_back(prefix + ".layer" + std::to_string(i / 2) +
                           (i % 2 == 0 ? ".weight" : ".bias"),
                       params[i]);
    }
  };
  add_group("generator", generator_.params);
  add_group("discriminator", discriminator_.params);
  add_group("ema", ema_);
  return out;
}

ModelPair ModelPair::clone() const {
  ModelPair copy = *this;
  for (auto& p : copy.generator_.params) p = p.clone();
  for (auto& p : copy.discriminator_.params) p = p.clone();
  for (auto& p : copy.ema_) p = p.clone();
  return copy;
}

Tensor generator_forward(const ModelPair& m, const Tensor& x_t, int t,
                         bool use_ema) {
  const std::vector<int> ts(x_t.rows(), t);
  return generator_forward(m, x_t, ts, use_ema);
}

Tensor generator_forward(const ModelPair& m, const Tensor& x_t,
                         std::span<const int> t, bool use_ema) {
  const auto& arch = m.architecture();
  if (x_t.rank() != 2 || x_t.cols() != arch.data_dim) {
    throw DimensionError("generator expects [batch x " +
                         std::to_string(arch.data_dim) + "], got " +
                         shape_string(x_t.shape()));
  }
  if (t.size() != x_t.rows()) {
    throw DimensionError("generator: one time index per row required");
  }
  const Tensor input = concat_cols({x_t, m.time_embedding().embed(t)});
  if (use_ema) return m.generator().forward(m.ema_params(), input);
  return m.generator().forward(input);
}

Tensor discriminator_forward(const ModelPair& m, const Tensor& x, int t,
                             const std::optional<Tensor>& extra) {
  const std::vector<int> ts(x.rows(), t);
  return discriminator_forward(m, x, ts, extra);
}

Tensor discriminator_forward(const ModelPair& m, const Tensor& x,
                             std::span<const int> t,
                             const std::optional<Tensor>& extra) {
  const auto& arch = m.architecture();
  if (x.rank() != 2 || x.cols() != arch.data_dim) {
    throw DimensionError("discriminator expects [batch x " +
                         std::to_string(arch.data_dim) + "], got " +
                         shape_string(x.shape()));
  }
  if (t.size() != x.rows()) {
    throw DimensionError("discriminator: one time index per row required");
  }
  if (extra.has_value() != arch.discriminator_takes_xt) {
    throw ContractError(arch.discriminator_takes_xt
                            ? "conditional discriminator needs x_t"
                            : "unconditional discriminator given x_t");
  }
  std::vector<Tensor> parts{x};
  if (extra) {
    if (extra->shape() != x.shape()) {
      throw DimensionError("discriminator: x_t shape differs from x");
    }
    parts.push_back(*extra);
  }
  parts.push_back(m.time_embedding().embed(t));
  return m.discriminator().forward(concat_cols(parts));
}

void ema_update(ModelPair& m, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw ConfigError("EMA decay must lie in [0, 1)");
  }
  auto& ema = m.ema_params();
  const auto& theta = m.generator().params;
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto dst = ema[i].mutable_data();
    const auto src = theta[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = decay * dst[j] + (1.0 - decay) * src[j];
    }
  }
}

}  // namespace ufogen
