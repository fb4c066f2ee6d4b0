// catcd: data generation, training, evaluation, prediction, gradient checks
// and feature-space diagnostics for the CAT change-detection network.
//
// Exit codes: 0 success, 1 usage or config error, 2 data or format error,
// 3 gradient check above tolerance.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "catcd/checkpoint.hpp"
#include "catcd/checks.hpp"
#include "catcd/config.hpp"
#include "catcd/data.hpp"
#include "catcd/trainer.hpp"

namespace fs = std::filesystem;
using namespace catcd;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kCheckFailed = 3;
constexpr double kGradTolerance = 1e-4;

struct ConfigArgs {
  std::string preset = "desk";
  fs::path config;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--preset", args.preset, "Base settings: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", args.config, "key = value overrides on top of the preset");
}

// Preset, then the config file (or config.txt next to `checkpoint`), then CAT_SEED.
RunConfig resolve_config(const ConfigArgs& args, const fs::path& checkpoint = {}) {
  const RunConfig base = RunConfig::preset(args.preset);
  RunConfig cfg = base;
  if (!args.config.empty()) {
    cfg = RunConfig::load(args.config, base);
  } else if (!checkpoint.empty() && fs::exists(checkpoint.parent_path() / "config.txt")) {
    cfg = RunConfig::load(checkpoint.parent_path() / "config.txt", base);
  }
  if (const char* env = std::getenv("CAT_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("CAT_SEED is not an unsigned integer: ") + env);
    }
  }
  cfg.validate();
  return cfg;
}

// A dataset directory means its val.txt (or train.txt for `split`); a file is a manifest.
std::vector<data::LoadedSample> load_split(const fs::path& data, const std::string& split) {
  const fs::path manifest = fs::is_directory(data) ? data / (split + ".txt") : data;
  return data::load_samples(data::read_manifest(manifest));
}

std::string fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- gen-data -------------------------------------------------------------------------

struct GenArgs {
  fs::path spec, out;
  std::size_t n_train = 512, n_val = 128;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> size;
};

int cmd_gen_data(const GenArgs& a, unsigned threads) {
  data::SceneSpec spec;
  if (!a.spec.empty()) spec = parse_scene_spec(read_text_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  if (a.size) spec.size = *a.size;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto stats = data::generate_dataset(spec, a.n_train, a.n_val, a.out, threads);
  std::cout << "split,count,min_fraction,mean_fraction,max_fraction\n";
  for (const auto& [name, st] : {std::pair{"train", stats.train}, std::pair{"val", stats.val}}) {
    std::cout << name << ',' << st.count << ',' << fmt(st.min_fraction, 6) << ','
              << fmt(st.mean_fraction, 6) << ',' << fmt(st.max_fraction, 6) << '\n';
  }
  std::cerr << "wrote " << a.n_train << " train and " << a.n_val << " val pairs to "
            << a.out.string() << '\n';
  return 0;
}

// ---- train / eval / predict / diagnose ------------------------------------------------

struct TrainArgs {
  ConfigArgs cfg;
  fs::path data, out;
  bool resume = false;
};

template <typename T>
int train_typed(const RunConfig& cfg, const TrainArgs& a, unsigned threads) {
  const auto train_set = load_split(a.data, "train");
  const auto val_set = load_split(a.data, "val");
  std::cerr << "train " << train_set.size() << " / val " << val_set.size() << " samples, "
            << cfg.epochs << " epochs\n";
  run::Network<T> network(cfg.model, cfg.seed);
  run::TrainOptions opt;
  opt.out = a.out;
  opt.resume = a.resume;
  opt.eval_threads = threads;
  opt.log = &std::cerr;
  const auto result = run::train_model(network, cfg, train_set, val_set, opt);
  std::cerr << "best val F1 " << fmt(result.best_f1) << " at epoch " << result.best_epoch << '\n';
  return 0;
}

struct EvalArgs {
  ConfigArgs cfg;
  fs::path checkpoint, data;
};

template <typename T>
int eval_typed(const RunConfig& cfg, const EvalArgs& a, unsigned threads) {
  const auto samples = load_split(a.data, "val");
  run::Network<T> network(cfg.model, cfg.seed);
  if (!a.checkpoint.empty()) run::load_weights(network, a.checkpoint);
  const auto r = run::evaluate(network.net, samples, cfg.batch_size, threads);
  std::cout << fmt(r.metrics.precision) << ',' << fmt(r.metrics.recall) << ','
            << fmt(r.metrics.f1) << '\n';
  if (r.metrics.precision_undefined) std::cerr << "precision undefined (no predicted changes)\n";
  if (r.metrics.recall_undefined) std::cerr << "recall undefined (no changed pixels)\n";
  return 0;
}

struct PredictArgs {
  ConfigArgs cfg;
  fs::path checkpoint, t1, t2, out, overlay, label;
};

template <typename T>
int predict_typed(const RunConfig& cfg, const PredictArgs& a) {
  const auto i1 = data::read_netpbm(a.t1);
  const auto i2 = data::read_netpbm(a.t2);
  if (i1.channels != 3 || i2.channels != 3 || i1.width != i2.width || i1.height != i2.height) {
    throw data::FormatError("predict: t1 and t2 must be RGB images of one size");
  }
  run::Network<T> network(cfg.model, cfg.seed);
  run::load_weights(network, a.checkpoint);
  train::LabelMap pred;
  {
    NoGradScope no_grad;
    const auto out = network.net(data::cast<T>(data::image_to_tensor(i1)),
                                 data::cast<T>(data::image_to_tensor(i2)), nn::Mode::inference());
    pred = train::predict_labels(out.logits);
  }
  data::write_netpbm(data::label_to_image(pred), a.out);
  std::cerr << pred.count_changed() << " of " << pred.size() << " pixels predicted changed\n";
  if (!a.overlay.empty()) {
    const auto truth = data::image_to_label(data::read_netpbm(a.label));
    if (truth.height() != pred.height() || truth.width() != pred.width()) {
      throw data::FormatError("predict: label size differs from the images");
    }
    data::Image img(pred.width(), pred.height(), 3);
    for (std::size_t y = 0; y < pred.height(); ++y) {
      for (std::size_t x = 0; x < pred.width(); ++x) {
        const bool p = pred.at(0, y, x), t = truth.at(0, y, x);
        std::array<std::uint8_t, 3> c{0, 0, 0};          // TN black
        if (p && t) c = {255, 255, 255};                 // TP white
        if (!p && t) c = {64, 224, 208};                 // FN turquoise
        if (p && !t) c = {255, 0, 0};                    // FP red
        std::copy(c.begin(), c.end(), img.pixels.begin() + (y * pred.width() + x) * 3);
      }
    }
    data::write_netpbm(img, a.overlay);
    const auto m = train::compute_metrics(train::confusion(pred, truth));
    std::cerr << "precision " << fmt(m.precision) << " recall " << fmt(m.recall) << " f1 "
              << fmt(m.f1) << '\n';
  }
  return 0;
}

struct DiagnoseArgs {
  ConfigArgs cfg;
  fs::path checkpoint, data;
};

template <typename T>
int diagnose_typed(const RunConfig& cfg, const DiagnoseArgs& a, unsigned threads) {
  const auto samples = load_split(a.data, "val");
  run::Network<T> network(cfg.model, cfg.seed);
  if (!a.checkpoint.empty()) run::load_weights(network, a.checkpoint);
  const auto rows = run::diagnose(network.net, samples, threads);
  auto ratio = [](const train::ClusterStats& s) { return s.valid ? fmt(s.ratio, 6) : "nan"; };
  std::cout << "sample,scale,ratio_input,ratio_cross,ratio_self\n";
  std::array<std::size_t, 3> valid{}, improved{};
  for (const auto& r : rows) {
    std::cout << r.sample << ',' << r.scale << ',' << ratio(r.input) << ',' << ratio(r.cross)
              << ',' << ratio(r.self) << '\n';
    if (r.input.valid && r.cross.valid) {
      ++valid[r.scale - 1];
      if (r.cross.ratio < r.input.ratio) ++improved[r.scale - 1];
    }
  }
  for (std::size_t s = 0; s < 3; ++s) {
    std::cerr << "scale " << s + 1 << ": cross-attention ratio below input ratio on "
              << improved[s] << " of " << valid[s] << " samples with both classes\n";
  }
  return 0;
}

// ---- gradcheck ------------------------------------------------------------------------

struct GradArgs {
  ConfigArgs cfg;
  std::string scope = "model";
  std::size_t size = 16;
  std::size_t entries = 8;
};

int cmd_gradcheck(const GradArgs& a) {
  const RunConfig cfg = resolve_config(a.cfg);
  GradCheckReport report;
  if (a.scope == "op") {
    report = checks::ops_suite(cfg.seed);
  } else if (a.scope == "block") {
    report = checks::block_check(cfg.model, cfg.seed);
  } else {
    report = checks::model_check(cfg.model, cfg.seed, a.size, a.entries);
  }
  std::cout << "name,max_rel_error,max_abs_error,checked,status\n";
  std::size_t failed = 0;
  for (const auto& e : report.entries) {
    const bool ok = e.max_rel_error <= kGradTolerance;
    failed += ok ? 0 : 1;
    char rel[32], abs[32];
    std::snprintf(rel, sizeof rel, "%.3e", e.max_rel_error);
    std::snprintf(abs, sizeof abs, "%.3e", e.max_abs_error);
    std::cout << e.name << ',' << rel << ',' << abs << ',' << e.checked << ','
              << (!ok ? "FAIL" : e.all_zero ? "zero" : "ok") << '\n';
  }
  std::cerr << report.entries.size() << " tensors, max relative error "
            << report.max_rel_error() << ", " << failed << " above " << kGradTolerance << '\n';
  return failed ? kCheckFailed : 0;
}

template <typename Fn>
int dispatch(const RunConfig& cfg, Fn fn) {
  return cfg.dtype == DType::f64 ? fn(double{}) : fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAT change detection: data, training, evaluation and diagnostics"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads for data generation and evaluation")
      ->check(CLI::Range(1u, 256u));

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic bi-temporal dataset");
  gen_cmd->add_option("--spec", gen.spec, "Scene spec file (key = value)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--train", gen.n_train, "Training pairs");
  gen_cmd->add_option("--val", gen.n_val, "Validation pairs");
  gen_cmd->add_option("--seed", gen.seed, "Overrides the scene file seed");
  gen_cmd->add_option("--size", gen.size, "Overrides the scene file image size");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train and keep last.catw and best.catw");
  add_config_options(train_cmd, tr.cfg);
  train_cmd->add_option("--data", tr.data, "Dataset directory with train.txt and val.txt")
      ->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/last.catw");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Print precision,recall,f1 of the changed class");
  add_config_options(eval_cmd, ev.cfg);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Weights; omitted means untrained");
  eval_cmd->add_option("--data", ev.data, "Dataset directory (val.txt) or manifest")->required();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Write the predicted change map of one pair");
  add_config_options(predict_cmd, pr.cfg);
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Weights")->required();
  predict_cmd->add_option("--t1", pr.t1, "First image (PPM)")->required();
  predict_cmd->add_option("--t2", pr.t2, "Second image (PPM)")->required();
  predict_cmd->add_option("--out", pr.out, "Change map (PGM)")->required();
  auto* overlay_opt =
      predict_cmd->add_option("--overlay", pr.overlay, "TP/TN/FN/FP overlay (PPM)");
  predict_cmd->add_option("--label", pr.label, "Ground truth (PGM) for --overlay")
      ->needs(overlay_opt);
  overlay_opt->needs("--label");

  GradArgs gr;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check (64-bit)");
  add_config_options(grad_cmd, gr.cfg);
  grad_cmd->add_option("--scope", gr.scope, "op, block or model")
      ->check(CLI::IsMember({"op", "block", "model"}));
  grad_cmd->add_option("--size", gr.size, "Image side for --scope model");
  grad_cmd->add_option("--entries", gr.entries, "Probed entries per tensor (0 = all)");

  DiagnoseArgs dg;
  auto* diag_cmd = app.add_subcommand("diagnose", "Per-sample cluster ratios around cross-attention");
  add_config_options(diag_cmd, dg.cfg);
  diag_cmd->add_option("--checkpoint", dg.checkpoint, "Weights; omitted means untrained");
  diag_cmd->add_option("--data", dg.data, "Dataset directory (val.txt) or manifest")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, threads);
    if (*grad_cmd) return cmd_gradcheck(gr);
    if (*train_cmd) {
      const auto cfg = resolve_config(tr.cfg);
      return dispatch(cfg, [&]<typename T>(T) { return train_typed<T>(cfg, tr, threads); });
    }
    if (*eval_cmd) {
      const auto cfg = resolve_config(ev.cfg, ev.checkpoint);
      return dispatch(cfg, [&]<typename T>(T) { return eval_typed<T>(cfg, ev, threads); });
    }
    if (*predict_cmd) {
      const auto cfg = resolve_config(pr.cfg, pr.checkpoint);
      return dispatch(cfg, [&]<typename T>(T) { return predict_typed<T>(cfg, pr); });
    }
    if (*diag_cmd) {
      const auto cfg = resolve_config(dg.cfg, dg.checkpoint);
      return dispatch(cfg, [&]<typename T>(T) { return diagnose_typed<T>(cfg, dg, threads); });
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const data::CheckpointMismatch& e) {
    std::cerr << "error: " << e.what();
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
