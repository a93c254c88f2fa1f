#include "ufogen/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ufogen/errors.hpp"

namespace ufogen {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& want,
                      const std::string& got) {
  throw ConfigError(key + ": expected " + want + ", got '" + got + "'");
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "integer", v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  if (v.empty()) bad(key, "number", v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(key, "number", v);
  }
  if (used != v.size()) bad(key, "number", v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad(key, "true|false", v);
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_int<std::size_t>(key, trim(item)));
  }
  if (out.empty()) bad(key, "comma-separated widths", v);
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(w[i]);
  }
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

#define UFOGEN_INT(K, M, T)                                                     \
  Field {                                                                      \
    K, [](TrainConfig& c, const std::string& k, const std::string& v) {        \
      c.M = parse_int<T>(k, v);                                                \
    },                                                                         \
        [](const TrainConfig& c) { return std::to_string(c.M); }               \
  }
#define UFOGEN_REAL(K, M)                                                      \
  Field {                                                                      \
    K, [](TrainConfig& c, const std::string& k, const std::string& v) {        \
      c.M = parse_double(k, v);                                                \
    },                                                                         \
        [](const TrainConfig& c) { return num(c.M); }                          \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      {"objective.kind",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.objective = parse_objective(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.objective)); }},
      UFOGEN_REAL("objective.lambda_kl", lambda_kl),
      {"objective.gamma_mode",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "constant") c.gamma_mode = GammaMode::kConstant;
         else if (v == "derived") c.gamma_mode = GammaMode::kDerived;
         else bad(k, "constant|derived", v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.gamma_mode)); }},
      {"objective.discriminator_time",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "previous") c.discriminator_time = DiscriminatorTime::kPrevious;
         else if (v == "current") c.discriminator_time = DiscriminatorTime::kCurrent;
         else bad(k, "previous|current", v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.discriminator_time)); }},
      UFOGEN_INT("schedule.steps", schedule_steps, int),
      UFOGEN_REAL("schedule.beta_min", beta_min),
      UFOGEN_REAL("schedule.beta_max", beta_max),
      {"network.generator_hidden",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.generator_hidden = parse_widths(k, v);
       },
       [](const TrainConfig& c) { return widths(c.generator_hidden); }},
      {"network.discriminator_hidden",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.discriminator_hidden = parse_widths(k, v);
       },
       [](const TrainConfig& c) { return widths(c.discriminator_hidden); }},
      UFOGEN_INT("network.time_embedding_dim", time_embedding_dim, std::size_t),
      UFOGEN_REAL("network.leaky_slope", leaky_slope),
      UFOGEN_INT("trainer.step_size", step_size, int),
      UFOGEN_INT("trainer.batch_size", batch_size, std::size_t),
      UFOGEN_REAL("trainer.lr", lr_peak),
      UFOGEN_INT("trainer.warmup_steps", warmup_steps, std::int64_t),
      UFOGEN_REAL("trainer.adam_beta1_g", adam_beta1_g),
      UFOGEN_REAL("trainer.adam_beta2_g", adam_beta2_g),
      UFOGEN_REAL("trainer.adam_beta1_d", adam_beta1_d),
      UFOGEN_REAL("trainer.adam_beta2_d", adam_beta2_d),
      UFOGEN_REAL("trainer.adam_eps", adam_eps),
      UFOGEN_REAL("trainer.grad_clip_g", grad_clip_g),
      UFOGEN_REAL("trainer.ema_decay", ema_decay),
      UFOGEN_INT("trainer.total_steps", total_steps, std::int64_t),
      UFOGEN_INT("trainer.metrics_every", metrics_every, std::int64_t),
      UFOGEN_INT("trainer.checkpoint_every", checkpoint_every, std::int64_t),
      {"trainer.time_sampling",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "coarse") c.time_sampling = TimeSampling::kCoarse;
         else if (v == "prev_uniform") c.time_sampling = TimeSampling::kPrevUniform;
         else bad(k, "coarse|prev_uniform", v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.time_sampling)); }},
      {"trainer.time_sharing",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "batch") c.time_sharing = TimeSharing::kBatch;
         else if (v == "sample") c.time_sharing = TimeSharing::kSample;
         else bad(k, "batch|sample", v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.time_sharing)); }},
      UFOGEN_INT("trainer.seed", seed, std::uint64_t),
      {"data.kind",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.data_kind = parse_toy_kind(v);
       },
       [](const TrainConfig& c) { return std::string(to_string(c.data_kind)); }},
      UFOGEN_REAL("data.mode_stddev", mode_stddev),
      UFOGEN_INT("data.size", dataset_size, std::size_t),
      UFOGEN_INT("eval.samples", eval_samples, std::size_t),
      UFOGEN_INT("eval.sample_steps", eval_sample_steps, int),
      {"eval.use_ema",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.eval_use_ema = parse_bool(k, v);
       },
       [](const TrainConfig& c) { return std::string(c.eval_use_ema ? "true" : "false"); }},
  };
  return f;
}

#undef UFOGEN_INT
#undef UFOGEN_REAL

}  // namespace

std::string_view to_string(GammaMode mode) {
  return mode == GammaMode::kConstant ? "constant" : "derived";
}
std::string_view to_string(DiscriminatorTime mode) {
  return mode == DiscriminatorTime::kPrevious ? "previous" : "current";
}
std::string_view to_string(TimeSampling mode) {
  return mode == TimeSampling::kCoarse ? "coarse" : "prev_uniform";
}
std::string_view to_string(TimeSharing mode) {
  return mode == TimeSharing::kBatch ? "batch" : "sample";
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
  };
  if (c.schedule_steps < 1) fail("schedule.steps", "must be >= 1");
  if (!(c.beta_min > 0.0 && c.beta_min <= c.beta_max && c.beta_max < 1.0)) {
    fail("schedule.beta_min", "need 0 < beta_min <= beta_max < 1");
  }
  if (c.step_size < 1 || c.step_size > c.schedule_steps) {
    fail("trainer.step_size", "must lie in [1, schedule.steps]");
  }
  if (!(c.lambda_kl >= 0.0)) fail("objective.lambda_kl", "must be >= 0");
  if (!(c.ema_decay >= 0.0 && c.ema_decay < 1.0)) fail("trainer.ema_decay", "must lie in [0, 1)");
  if (!(c.lr_peak > 0.0)) fail("trainer.lr", "must be > 0");
  if (c.warmup_steps < 0) fail("trainer.warmup_steps", "must be >= 0");
  for (auto [key, b] : {std::pair{"trainer.adam_beta1_g", c.adam_beta1_g},
                        {"trainer.adam_beta2_g", c.adam_beta2_g},
                        {"trainer.adam_beta1_d", c.adam_beta1_d},
                        {"trainer.adam_beta2_d", c.adam_beta2_d}}) {
    if (!(b >= 0.0 && b < 1.0)) fail(key, "must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) fail("trainer.adam_eps", "must be > 0");
  if (!(c.grad_clip_g > 0.0)) fail("trainer.grad_clip_g", "must be > 0");
  if (c.batch_size < 1) fail("trainer.batch_size", "must be >= 1");
  if (c.total_steps < 0) fail("trainer.total_steps", "must be >= 0");
  if (c.metrics_every < 1) fail("trainer.metrics_every", "must be >= 1");
  if (c.checkpoint_every < 1) fail("trainer.checkpoint_every", "must be >= 1");
  if (c.time_embedding_dim == 0 || c.time_embedding_dim % 2 != 0) {
    fail("network.time_embedding_dim", "must be even and positive");
  }
  for (auto w : c.generator_hidden) {
    if (w == 0) fail("network.generator_hidden", "widths must be positive");
  }
  for (auto w : c.discriminator_hidden) {
    if (w == 0) fail("network.discriminator_hidden", "widths must be positive");
  }
  if (!(c.leaky_slope >= 0.0)) fail("network.leaky_slope", "must be >= 0");
  if (!(c.mode_stddev > 0.0)) fail("data.mode_stddev", "must be > 0");
  if (c.dataset_size < 1) fail("data.size", "must be >= 1");
  if (c.eval_samples < 1) fail("eval.samples", "must be >= 1");
  if (c.eval_sample_steps < 1 || c.eval_sample_steps > c.schedule_steps) {
    fail("eval.sample_steps", "must lie in [1, schedule.steps]");
  }
}

TrainConfig parse_config(std::string_view text) {
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;

  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(key + ": unknown key");
    if (!seen.insert(key).second) throw ConfigError(key + ": duplicate key");
    try {
      it->second->set(cfg, key, value);
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      if (what.rfind(key, 0) == 0) throw;
      throw ConfigError(key + ": " + what);
    }
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : format_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Architecture architecture_of(const TrainConfig& cfg) {
  Architecture a;
  a.data_dim = 2;
  a.generator_hidden = cfg.generator_hidden;
  a.discriminator_hidden = cfg.discriminator_hidden;
  a.time_embedding_dim = cfg.time_embedding_dim;
  a.leaky_slope = cfg.leaky_slope;
  a.discriminator_takes_xt = discriminator_takes_xt(cfg.objective);
  return a;
}

ObjectiveSettings objective_settings(const TrainConfig& cfg) {
  return ObjectiveSettings{cfg.objective, cfg.lambda_kl, cfg.gamma_mode,
                           cfg.discriminator_time};
}

ToySpec toy_spec(const TrainConfig& cfg) {
  return ToySpec{cfg.data_kind, cfg.mode_stddev};
}

}  // namespace ufogen
