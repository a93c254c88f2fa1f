#include "ufogen/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ufogen/errors.hpp"

namespace ufogen {

namespace {

constexpr std::uint64_t kRngSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kDataSalt = 0xDA7A5EEDULL;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const std::vector<Tensor>& ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return all_finite(t.data()); });
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

// Turns gradient tracking off for a parameter group for one scope.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Tensor>& params) : params_(params) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor>& params_;
};

std::string layer_name(std::size_t i) {
  return "layer" + std::to_string(i / 2) + (i % 2 == 0 ? ".weight" : ".bias");
}

// ---- binary encoding -------------------------------------------------------

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    uint(bits);
  }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  double f64(const char* what) {
    const auto bits = uint<std::uint64_t>(what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& buf, std::size_t n) {
  auto crc = crc32_z(0L, Z_NULL, 0);
  crc = crc32_z(crc, reinterpret_cast<const Bytef*>(buf.data()), n);
  return static_cast<std::uint32_t>(crc);
}

std::vector<double> split_u64(std::span<const std::uint64_t> words) {
  std::vector<double> out;
  out.reserve(2 * words.size());
  for (auto w : words) {
    out.push_back(static_cast<double>(w >> 32));
    out.push_back(static_cast<double>(w & 0xFFFFFFFFULL));
  }
  return out;
}

std::vector<std::uint64_t> join_u64(std::span<const double> halves) {
  if (halves.size() % 2 != 0) throw CheckpointError("odd-length integer tensor");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < halves.size(); i += 2) {
    const double hi = halves[i], lo = halves[i + 1];
    if (!(hi >= 0 && hi < 4294967296.0 && lo >= 0 && lo < 4294967296.0) ||
        hi != std::floor(hi) || lo != std::floor(lo)) {
      throw CheckpointError("integer tensor holds a non-integer value");
    }
    out.push_back((static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo));
  }
  return out;
}

Tensor rng_tensor(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  std::istringstream in(ss.str());
  std::vector<std::uint64_t> words;
  std::uint64_t w;
  while (in >> w) words.push_back(w);
  auto halves = split_u64(words);
  const std::size_t n = halves.size();
  return Tensor::from({n}, std::move(halves));
}

std::mt19937_64 rng_from(const Tensor& t) {
  std::ostringstream ss;
  const auto words = join_u64(t.data());
  for (std::size_t i = 0; i < words.size(); ++i) ss << (i ? " " : "") << words[i];
  std::mt19937_64 rng;
  std::istringstream in(ss.str());
  in >> rng;
  if (in.fail()) throw CheckpointError("corrupt rng state");
  return rng;
}

// Mutable (name, tensor) view over every serialized piece of a state.
std::vector<std::pair<std::string, Tensor*>> state_slots(TrainState& s) {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto group = [&out](const std::string& prefix, std::vector<Tensor>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) out.emplace_back(prefix + layer_name(i), &ts[i]);
  };
  group("generator.", s.models.generator().params);
  group("discriminator.", s.models.discriminator().params);
  group("ema.", s.models.ema_params());
  group("adam_g.m.", s.adam_g.m);
  group("adam_g.v.", s.adam_g.v);
  group("adam_d.m.", s.adam_d.m);
  group("adam_d.v.", s.adam_d.v);
  return out;
}

void check_state(const TrainState& s, std::int64_t step) {
  auto check = [step](const std::vector<Tensor>& ts, const char* what) {
    if (!all_finite(ts)) throw DivergenceError(step, std::string("non-finite ") + what);
  };
  check(s.models.generator().params, "generator parameter");
  check(s.models.discriminator().params, "discriminator parameter");
  check(s.models.ema_params(), "EMA parameter");
  check(s.adam_g.m, "generator moment");
  check(s.adam_g.v, "generator moment");
  check(s.adam_d.m, "discriminator moment");
  check(s.adam_d.v, "discriminator moment");
}

}  // namespace

AdamMoments AdamMoments::zeros_like(const std::vector<Tensor>& params) {
  AdamMoments a;
  for (const auto& p : params) {
    a.m.push_back(Tensor::zeros(p.shape()));
    a.v.push_back(Tensor::zeros(p.shape()));
  }
  return a;
}

AdamMoments AdamMoments::clone() const {
  AdamMoments a;
  for (const auto& t : m) a.m.push_back(t.clone());
  for (const auto& t : v) a.v.push_back(t.clone());
  return a;
}

TrainState::TrainState(const TrainConfig& cfg)
    : models(architecture_of(cfg), cfg.schedule_steps, cfg.seed),
      adam_g(AdamMoments::zeros_like(models.generator().params)),
      adam_d(AdamMoments::zeros_like(models.discriminator().params)),
      rng(cfg.seed ^ kRngSalt) {}

TrainState TrainState::clone() const {
  TrainState copy = *this;
  copy.models = models.clone();
  copy.adam_g = adam_g.clone();
  copy.adam_d = adam_d.clone();
  return copy;
}

std::pair<int, int> sample_time(const TrainConfig& cfg, std::mt19937_64& rng) {
  const int T = cfg.schedule_steps, S = cfg.step_size;
  if (cfg.time_sampling == TimeSampling::kCoarse) {
    const int t = std::uniform_int_distribution<int>(1, T)(rng);
    return {t, std::max(0, t - S)};
  }
  const int t_prev = std::uniform_int_distribution<int>(0, T - 1)(rng);
  return {std::min(T, t_prev + S), t_prev};
}

double warmup_lr(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw ContractError("warmup_lr: step must be >= 0");
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.lr_peak;
  return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

void adam_update(std::vector<Tensor>& params, AdamMoments& moments, double lr,
                 double beta1, double beta2, double eps, std::int64_t step) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto p = params[i].mutable_data();
    const auto g = params[i].grad();
    auto m = moments.m[i].mutable_data();
    auto v = moments.v[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

Tensor training_dataset(const TrainConfig& cfg) {
  return make_toy(toy_spec(cfg), cfg.dataset_size, cfg.seed ^ kDataSalt);
}

LossBreakdown train_step(TrainState& state, const TrainConfig& cfg,
                         const NoiseSchedule& s, const Tensor& dataset) {
  if (dataset.rank() != 2 || dataset.rows() == 0 || dataset.cols() != 2) {
    throw ContractError("train_step: dataset must be a non-empty [n x 2] array");
  }
  const std::int64_t k = state.step + 1;
  const double lr = warmup_lr(k, cfg);
  const std::size_t n = cfg.batch_size;
  auto& rng = state.rng;

  std::uniform_int_distribution<std::size_t> pick(0, dataset.rows() - 1);
  const auto src = dataset.data();
  std::vector<double> xb(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = pick(rng);
    xb[2 * i] = src[2 * r];
    xb[2 * i + 1] = src[2 * r + 1];
  }
  std::vector<int> t(n), t_prev(n);
  if (cfg.time_sharing == TimeSharing::kBatch) {
    const auto [a, b] = sample_time(cfg, rng);
    std::fill(t.begin(), t.end(), a);
    std::fill(t_prev.begin(), t_prev.end(), b);
  } else {
    for (std::size_t i = 0; i < n; ++i) std::tie(t[i], t_prev[i]) = sample_time(cfg, rng);
  }
  const DiffusionDraw draw =
      draw_diffusion(s, Tensor::from({n, 2}, std::move(xb)), std::move(t), std::move(t_prev), rng);

  const ObjectiveSettings obj = objective_settings(cfg);
  ModelPair& m = state.models;
  auto& g_params = m.generator().params;
  auto& d_params = m.discriminator().params;
  const GeneratorPass fake = run_generator(obj, s, m, draw);

  LossBreakdown out;
  if (is_adversarial(obj.kind)) {
    zero_grads(d_params);
    const Tensor d_loss = discriminator_objective(obj, m, draw, fake);
    out.d_loss = d_loss.item();
    if (!std::isfinite(out.d_loss)) throw DivergenceError(k, "non-finite discriminator loss");
    backward(d_loss);
    adam_update(d_params, state.adam_d, lr, cfg.adam_beta1_d, cfg.adam_beta2_d, cfg.adam_eps, k);
  }

  GeneratorLosses g;
  {
    FreezeGuard freeze(d_params);
    g = generator_objective(obj, s, m, draw, fake);
  }
  out.g_adv = g.adversarial.item();
  out.g_recon = g.reconstruction.item();
  out.g_total = g.total.item();
  if (!std::isfinite(out.g_total) || !std::isfinite(out.g_adv) || !std::isfinite(out.g_recon)) {
    throw DivergenceError(k, "non-finite generator loss");
  }
  zero_grads(g_params);
  backward(g.total);
  clip_grad_norm(g_params, cfg.grad_clip_g);
  adam_update(g_params, state.adam_g, lr, cfg.adam_beta1_g, cfg.adam_beta2_g, cfg.adam_eps, k);
  ema_update(m, cfg.ema_decay);

  check_state(state, k);
  state.step = k;
  return out;
}

void run(TrainState& state, const TrainConfig& cfg, const Tensor& dataset,
         const RunHooks& hooks) {
  validate(cfg);
  const NoiseSchedule s = linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
  TrainState healthy = state.clone();
  while (state.step < cfg.total_steps) {
    LossBreakdown losses;
    try {
      losses = train_step(state, cfg, s, dataset);
    } catch (const DivergenceError&) {
      if (hooks.on_divergence) hooks.on_divergence(healthy);
      throw;
    }
    if (state.step % cfg.metrics_every == 0) {
      if (hooks.on_metrics) {
        hooks.on_metrics(MetricsRecord{state.step, cfg.objective, losses,
                                       warmup_lr(state.step, cfg)});
      }
      healthy = state.clone();
    }
    if (hooks.on_checkpoint &&
        (state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps)) {
      hooks.on_checkpoint(state);
    }
  }
}

TrainState run(const TrainConfig& cfg, const Tensor& dataset, const RunHooks& hooks) {
  validate(cfg);
  TrainState state(cfg);
  run(state, cfg, dataset, hooks);
  return state;
}

std::string encode_checkpoint(const TrainConfig& cfg, const TrainState& state) {
  auto& mut = const_cast<TrainState&>(state);
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (auto& [name, ptr] : state_slots(mut)) tensors.emplace_back(name, *ptr);
  tensors.emplace_back("state.step",
                       Tensor::from({1}, {static_cast<double>(state.step)}));
  tensors.emplace_back("state.rng", rng_tensor(state.rng));
  const std::uint64_t hash = config_hash(cfg);
  tensors.emplace_back("state.config_hash",
                       Tensor::from({2}, split_u64(std::span<const std::uint64_t>(&hash, 1))));

  const std::string text = format_config(cfg);
  Writer w;
  w.bytes("UFOG", 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.uint<std::uint64_t>(e);
    for (double v : t.data()) w.f64(v);
  }
  w.uint<std::uint32_t>(crc_of(w.str(), w.str().size()));
  return std::move(w.str());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 4) throw CheckpointError("truncated checkpoint: header");
  if (bytes.compare(0, 4, "UFOG") != 0) throw CheckpointError("bad magic");
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body);
  r.text(4, "magic");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Reader tail(bytes, bytes.size());
  tail.text(body, "body");
  if (tail.uint<std::uint32_t>("crc") != crc_of(bytes, body)) {
    throw CheckpointError("CRC mismatch");
  }

  const auto text_len = r.uint<std::uint64_t>("config length");
  if (text_len > body) throw CheckpointError("truncated checkpoint: config blob");
  const std::string text = r.text(static_cast<std::size_t>(text_len), "config blob");
  TrainConfig cfg;
  try {
    cfg = parse_config(text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config invalid: ") + e.what());
  }

  std::map<std::string, Tensor> found;
  const auto count = r.uint<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint16_t>("name length");
    std::string name = r.text(name_len, "name");
    const auto rank = r.uint<std::uint8_t>("rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = r.uint<std::uint64_t>("extent");
      if (e > body) throw CheckpointError("extent exceeds file size in " + name);
      shape.push_back(static_cast<std::size_t>(e));
      numel *= shape.back();
    }
    r.need(numel * 8, "payload");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64("payload");
    if (!found.emplace(name, Tensor::from(shape, std::move(values))).second) {
      throw CheckpointError("duplicate tensor " + name);
    }
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes before CRC");

  auto take = [&found](const std::string& name) {
    const auto it = found.find(name);
    if (it == found.end()) throw CheckpointError("missing tensor " + name);
    Tensor t = it->second;
    found.erase(it);
    return t;
  };

  TrainState state(cfg);
  for (auto& [name, slot] : state_slots(state)) {
    const Tensor t = take(name);
    if (t.shape() != slot->shape()) {
      throw CheckpointError("shape mismatch for " + name + ": file " + shape_string(t.shape()) +
                            ", config " + shape_string(slot->shape()));
    }
    std::copy(t.data().begin(), t.data().end(), slot->mutable_data().begin());
  }
  const Tensor step = take("state.step");
  if (step.size() != 1 || step.data()[0] < 0 || step.data()[0] != std::floor(step.data()[0])) {
    throw CheckpointError("bad step counter");
  }
  state.step = static_cast<std::int64_t>(step.data()[0]);
  state.rng = rng_from(take("state.rng"));
  const auto hash = join_u64(take("state.config_hash").data());
  if (hash.size() != 1 || hash[0] != config_hash(cfg)) {
    throw CheckpointError("config hash does not match embedded config");
  }
  if (!found.empty()) throw CheckpointError("unexpected tensor " + found.begin()->first);
  return Checkpoint{std::move(cfg), std::move(state)};
}

void save_checkpoint(const TrainConfig& cfg, const TrainState& state,
                     const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(cfg, state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

std::string metrics_csv_header() { return "step,objective,d_loss,g_adv,g_recon,g_total,lr\n"; }

std::string metrics_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<long long>(r.step), std::string(to_string(r.objective)).c_str(),
                r.losses.d_loss, r.losses.g_adv, r.losses.g_recon, r.losses.g_total, r.lr);
  return buf;
}

}  // namespace ufogen
