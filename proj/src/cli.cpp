#include "ufogen/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "ufogen/config.hpp"
#include "ufogen/errors.hpp"
#include "ufogen/sampler.hpp"
#include "ufogen/trainer.hpp"
#include "ufogen/verify.hpp"

namespace ufogen {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalSampleSalt = 0xE7A15EEDULL;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string eval_csv(const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%zu\n", r.modes_covered,
                r.high_quality_fraction, r.mmd, r.sample_count);
  return std::string("modes_covered,high_quality_fraction,mmd,sample_count\n") + buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Trains `state` to cfg.total_steps, writing the resolved config, metrics and
// checkpoints into `dir`.
void train_into(const TrainConfig& cfg, TrainState& state, const fs::path& dir, bool append) {
  ensure_dir(dir);
  write_text(dir / "config.resolved.txt", format_config(cfg));
  const fs::path metrics_path = dir / "metrics.csv";
  const bool header = !append || !fs::exists(metrics_path) || fs::file_size(metrics_path) == 0;
  std::ofstream metrics(metrics_path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  if (header) metrics << metrics_csv_header();

  auto save = [&](const TrainState& s) {
    save_checkpoint(cfg, s, dir / ("step_" + std::to_string(s.step) + ".ufog"));
  };
  RunHooks hooks;
  hooks.on_metrics = [&](const MetricsRecord& r) {
    metrics << metrics_csv_row(r);
    metrics.flush();
    if (!metrics) throw IoError("write failed for " + metrics_path.string());
  };
  hooks.on_checkpoint = save;
  hooks.on_divergence = save;
  const Tensor dataset = training_dataset(cfg);
  run(state, cfg, dataset, hooks);
}

EvalReport sample_and_evaluate(const TrainConfig& cfg, const TrainState& state) {
  const NoiseSchedule s = linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
  std::mt19937_64 rng(cfg.seed ^ kEvalSampleSalt);
  const Tensor pts = sample_for(cfg.objective, state.models, s, cfg.eval_samples,
                                cfg.eval_sample_steps, rng, cfg.eval_use_ema);
  return evaluate(pts, toy_spec(cfg));
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (auto env = seed_from_env()) return *env;
  return 0;
}

// ---- subcommands -----------------------------------------------------------

struct TrainArgs {
  std::string config, out, resume;
};

int cmd_train(const TrainArgs& a) {
  if (a.resume.empty()) {
    if (a.config.empty()) throw ConfigError("train: --config is required");
    TrainConfig cfg = load_config(a.config);
    if (auto env = seed_from_env()) cfg.seed = *env;
    validate(cfg);
    TrainState state(cfg);
    train_into(cfg, state, a.out, false);
    std::cout << "trained " << to_string(cfg.objective) << " for " << state.step << " steps\n";
    return kExitOk;
  }
  Checkpoint ck = load_checkpoint(a.resume);
  if (!a.config.empty()) {
    // Only the step budget may change on resume.
    const TrainConfig cfg = load_config(a.config);
    TrainConfig same = cfg;
    same.total_steps = ck.config.total_steps;
    if (config_hash(same) != config_hash(ck.config)) {
      throw ConfigError("resume: config differs from the checkpoint beyond trainer.total_steps");
    }
    ck.config.total_steps = cfg.total_steps;
  }
  train_into(ck.config, ck.state, a.out, true);
  std::cout << "resumed " << to_string(ck.config.objective) << " to step " << ck.state.step << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string checkpoint, out;
  std::size_t n = 10000;
  int steps = 1;
  bool ema = true;
  std::optional<std::uint64_t> seed;
};

int cmd_sample(const SampleArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const TrainConfig& cfg = ck.config;
  const NoiseSchedule s = linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
  const std::uint64_t seed = resolve_seed(a.seed);
  std::mt19937_64 rng(seed);
  if (a.n == 0) throw ConfigError("sample: --n must be >= 1");
  PointFile file;
  file.kind = std::string(to_string(cfg.data_kind));
  file.seed = seed;
  file.points = sample_for(cfg.objective, ck.state.models, s, a.n, a.steps, rng, a.ema);
  write_points(a.out, file);
  return kExitOk;
}

struct EvalArgs {
  std::string samples, out, kind;
  double mode_stddev = 0.05;
};

int cmd_eval(const EvalArgs& a) {
  const PointFile file = read_points(a.samples);
  if (file.points.rows() == 0) throw ConfigError("eval: sample file holds no points");
  const ToySpec spec{parse_toy_kind(a.kind.empty() ? file.kind : a.kind), a.mode_stddev};
  const std::string csv = eval_csv(evaluate(file.points, spec));
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_text(a.out, csv);
  }
  return kExitOk;
}

struct VerifyArgs {
  std::string out;
  bool break_kl = false;
  std::optional<std::uint64_t> seed;
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions opts;
  opts.seed = resolve_seed(a.seed);
  if (a.break_kl) opts.kl_scale = 1.01;
  const auto rows = run_verify_suite(opts);
  const std::string report = format_verify_report(rows);
  if (a.out.empty()) {
    std::cout << report;
  } else {
    write_text(a.out, report);
  }
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.pass) {
      ++failed;
      std::cerr << "FAILED " << r.name << ": measured " << r.measured << ", need " << r.relation
                << ' ' << r.tolerance << '\n';
    }
  }
  std::cerr << rows.size() - failed << "/" << rows.size() << " checks passed\n";
  return failed == 0 ? kExitOk : kExitVerifyFailed;
}

struct PlotArgs {
  std::string samples, title, out, kind = "grid25";
  std::vector<std::string> panels;  // flattened (path, title) pairs
  double mode_stddev = 0.05;
};

int cmd_plot(const PlotArgs& a) {
  std::vector<PlotPanel> panels;
  if (!a.samples.empty()) {
    panels.push_back({a.title.empty() ? a.samples : a.title, read_points(a.samples).points});
  }
  for (std::size_t i = 0; i + 1 < a.panels.size(); i += 2) {
    panels.push_back({a.panels[i + 1], read_points(a.panels[i]).points});
  }
  if (panels.empty()) throw ConfigError("plot: give --samples or at least one --panel");
  write_text(a.out, render_svg(panels, ToySpec{parse_toy_kind(a.kind), a.mode_stddev}));
  return kExitOk;
}

struct AblateArgs {
  std::string config, out;
};

int cmd_ablate(const AblateArgs& a) {
  TrainConfig base = load_config(a.config);
  if (auto env = seed_from_env()) base.seed = *env;
  validate(base);
  ensure_dir(a.out);
  const int T = base.schedule_steps;
  std::vector<int> sizes;
  for (int div : {8, 4, 2, 1}) {
    const int S = std::max(1, T / div);
    if (sizes.empty() || sizes.back() != S) sizes.push_back(S);
  }
  std::string summary = "step_size,modes_covered,high_quality_fraction,mmd,sample_count\n";
  for (int S : sizes) {
    TrainConfig cfg = base;
    cfg.step_size = S;
    cfg.checkpoint_every = std::max<std::int64_t>(1, cfg.total_steps);
    TrainState state(cfg);
    const fs::path dir = fs::path(a.out) / ("S_" + std::to_string(S));
    train_into(cfg, state, dir, false);
    const EvalReport r = sample_and_evaluate(cfg, state);
    const std::string csv = eval_csv(r);
    write_text(dir / "eval.csv", csv);
    summary += std::to_string(S) + "," + csv.substr(csv.find('\n') + 1);
    std::cout << "S=" << S << " modes=" << r.modes_covered << " hq=" << r.high_quality_fraction
              << "\n";
  }
  write_text(fs::path(a.out) / "ablation.csv", summary);
  return kExitOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::logic_error& e) {
    // Invalid arguments, shapes or indices that came from user input.
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("UFOGEN_SEED");
  if (raw == nullptr) return std::nullopt;
  const std::string v(raw);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("UFOGEN_SEED: expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

std::string render_svg(const std::vector<PlotPanel>& panels, const ToySpec& spec) {
  constexpr double kSize = 360.0, kMargin = 20.0, kTitle = 24.0, kLo = -5.0, kHi = 5.0;
  const double scale = kSize / (kHi - kLo);
  const double width = panels.size() * (kSize + 2 * kMargin);
  const double height = kSize + 2 * kMargin + kTitle;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
      << fmt(height) << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height) << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const double ox = p * (kSize + 2 * kMargin) + kMargin, oy = kTitle + kMargin;
    auto px = [&](double x) { return ox + (x - kLo) * scale; };
    auto py = [&](double y) { return oy + (kHi - y) * scale; };
    svg << "<g>\n<text x=\"" << fmt(ox + kSize / 2) << "\" y=\"" << fmt(kTitle)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
        << xml_escape(panels[p].title) << "</text>\n";
    svg << "<rect x=\"" << fmt(ox) << "\" y=\"" << fmt(oy) << "\" width=\"" << fmt(kSize)
        << "\" height=\"" << fmt(kSize) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    const Tensor& pts = panels[p].points;
    if (pts.rank() == 2 && pts.cols() == 2) {
      const auto d = pts.data();
      for (std::size_t i = 0; i < pts.rows(); ++i) {
        const double x = d[2 * i], y = d[2 * i + 1];
        if (!(x >= kLo && x <= kHi && y >= kLo && y <= kHi)) continue;
        svg << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y))
            << "\" r=\"1.2\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
      }
    }
    if (spec.kind == ToyKind::kGrid25) {
      const double ring = std::max(3.0, 3.0 * spec.mode_stddev * scale);
      for (const auto& c : spec.centers()) {
        svg << "<circle cx=\"" << fmt(px(c[0])) << "\" cy=\"" << fmt(py(c[1])) << "\" r=\""
            << fmt(ring) << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n";
      }
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Diffusion-GAN hybrid training on 2-D toy distributions"};
  app.require_subcommand(1);
  std::function<int()> action;

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model from a config file");
  c_train->add_option("--config", train.config, "Config file (flat dotted keys)");
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_option("--resume", train.resume, "Continue from a checkpoint");
  c_train->callback([&] { action = [&] { return cmd_train(train); }; });

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  c_sample->add_option("--checkpoint", sample.checkpoint)->required();
  c_sample->add_option("--out", sample.out)->required();
  c_sample->add_option("--n", sample.n, "Number of samples");
  c_sample->add_option("--steps", sample.steps, "Sampling steps k");
  c_sample->add_flag("--ema,!--no-ema", sample.ema, "Use EMA parameters (default)");
  c_sample->add_option("--seed", sample.seed);
  c_sample->callback([&] { action = [&] { return cmd_sample(sample); }; });

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score a sample file");
  c_eval->add_option("--samples", eval.samples)->required();
  c_eval->add_option("--out", eval.out, "Report CSV (stdout if omitted)");
  c_eval->add_option("--kind", eval.kind, "Toy kind (default: from the file header)");
  c_eval->add_option("--mode-stddev", eval.mode_stddev);
  c_eval->callback([&] { action = [&] { return cmd_eval(eval); }; });

  VerifyArgs verify;
  auto* c_verify = app.add_subcommand("verify", "Run the derivation checks");
  c_verify->add_option("--out", verify.out, "Report CSV (stdout if omitted)");
  c_verify->add_flag("--break-kl", verify.break_kl, "Scale the closed-form KL by 1.01");
  c_verify->add_option("--seed", verify.seed);
  c_verify->callback([&] { action = [&] { return cmd_verify(verify); }; });

  PlotArgs plot;
  auto* c_plot = app.add_subcommand("plot", "Render sample files as SVG");
  c_plot->add_option("--samples", plot.samples);
  c_plot->add_option("--title", plot.title);
  c_plot->add_option("--panel", plot.panels, "<samples> <title>, repeatable")
      ->expected(2)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_plot->add_option("--out", plot.out)->required();
  c_plot->add_option("--kind", plot.kind);
  c_plot->add_option("--mode-stddev", plot.mode_stddev);
  c_plot->callback([&] { action = [&] { return cmd_plot(plot); }; });

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Sweep the denoising step size");
  c_ablate->add_option("--config", ablate.config)->required();
  c_ablate->add_option("--out", ablate.out)->required();
  c_ablate->callback([&] { action = [&] { return cmd_ablate(ablate); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  return guarded(action);
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"ufogen"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return cli_main(static_cast<int>(storage.size()), argv.data());
}

}  // namespace ufogen
