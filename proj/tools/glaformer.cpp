// Command-line front end: synth, train, eval, predict, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "glaformer/checkpoint.hpp"
#include "glaformer/errors.hpp"
#include "glaformer/hsi.hpp"
#include "glaformer/metrics.hpp"
#include "glaformer/model.hpp"
#include "glaformer/training.hpp"

namespace fs = std::filesystem;
using namespace glaformer;
using nlohmann::json;

namespace {

struct Options {
  std::string t1, t2, labels, config, checkpoint, out, pred;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::size_t threads = 1;
  std::string precision = "f32";
  std::string mask = "test";
};

RunConfig run_config(const Options& o) {
  RunConfig run = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) run.train.seed = *o.seed;
  if (!o.variant.empty()) run.model.variant = parse_variant(o.variant);
  run.train.threads = o.threads;
  return run;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
}

bool use_f64(const Options& o) {
  if (o.precision == "f64") return true;
  if (o.precision == "f32") return false;
  throw ConfigError("--precision must be f32 or f64, got '" + o.precision + "'");
}

// Cubes as the model sees them: paired, and z-scored when the run asks for it.
std::pair<HsiCube, HsiCube> load_inputs(const Options& o, bool standardize) {
  require(o.t1, "--t1");
  require(o.t2, "--t2");
  auto t1 = load_cube(o.t1);
  auto t2 = load_cube(o.t2);
  check_paired(t1, t2);
  if (standardize) return standardize_pair(t1, t2);
  return {std::move(t1), std::move(t2)};
}

std::vector<std::size_t> eval_pixels(const Options& o, const RunConfig& run, const LabelMap& labels) {
  if (o.mask == "all") {
    std::vector<std::size_t> all(labels.pixels());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  if (o.mask != "test") throw ConfigError("--mask must be test or all, got '" + o.mask + "'");
  return split_dataset(labels, run.split.train_frac, run.split.val_frac, run.train.seed).test;
}

void print_metrics(const ConfusionCounts& c) {
  std::cout << metrics_json(c) << '\n';
  const double oa = overall_accuracy(c);
  std::optional<double> k;
  try {
    k = kappa(c);
  } catch (const UndefinedKappaError&) {
  }
  char line[160];
  std::snprintf(line, sizeof line, "OA     %7.2f %%\n", 100.0 * oa);
  std::cout << line;
  if (k) {
    std::snprintf(line, sizeof line, "Kappa  %7.2f %%\n", 100.0 * *k);
  } else {
    std::snprintf(line, sizeof line, "Kappa  undefined\n");
  }
  std::cout << line;
  std::snprintf(line, sizeof line, "TP %llu  TN %llu  FP %llu  FN %llu\n",
                static_cast<unsigned long long>(c.tp), static_cast<unsigned long long>(c.tn),
                static_cast<unsigned long long>(c.fp), static_cast<unsigned long long>(c.fn));
  std::cout << line;
}

int cmd_synth(const Options& o) {
  require(o.out, "--out");
  const RunConfig run = run_config(o);
  const auto scene = make_synthetic_scene(run.synthetic, run.train.seed);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  save_cube(scene.t1, dir / "t1.json");
  save_cube(scene.t2, dir / "t2.json");
  save_labels(scene.labels, dir / "labels.pgm");
  std::size_t changed = 0;
  for (auto l : scene.labels.labels) changed += l;
  std::cout << json{{"status", "ok"},
                    {"t1", (dir / "t1.json").string()},
                    {"t2", (dir / "t2.json").string()},
                    {"labels", (dir / "labels.pgm").string()},
                    {"changed", changed},
                    {"pixels", scene.labels.pixels()}}
                   .dump()
            << '\n';
  return 0;
}

template <typename T>
int train_as(const Options& o, RunConfig run) {
  auto [t1, t2] = load_inputs(o, run.standardize);
  require(o.labels, "--labels");
  const auto labels = load_labels(o.labels);
  check_paired(t1, labels);
  run.model.bands = t1.bands;
  const auto split = split_dataset(labels, run.split.train_frac, run.split.val_frac, run.train.seed);
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << '\n';

  auto result = train<T>(run.model, {t1, t2, labels, split}, run.train);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.json", run, result.best);
  write_history_csv(result.history, dir / "history.csv");

  json summary{{"status", "ok"},
               {"checkpoint", (dir / "model.json").string()},
               {"history", (dir / "history.csv").string()},
               {"best_epoch", result.best_epoch}};
  if (result.best_epoch > 0) summary["val_oa"] = result.history[result.best_epoch - 1].val_oa;
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  require(o.out, "--out");
  const RunConfig run = run_config(o);
  return use_f64(o) ? train_as<double>(o, run) : train_as<float>(o, run);
}

template <typename T>
ChangeMap predict_with(const Options& o, const LoadedCheckpoint<T>& ck, const HsiCube& t1,
                       const HsiCube& t2, std::span<const std::size_t> pixels) {
  ChangeMap map(t1.height, t1.width);
  const auto decisions = predict_pixels(t1, t2, ck.params, ck.run.model, pixels, o.threads);
  for (std::size_t i = 0; i < pixels.size(); ++i) map.decisions[pixels[i]] = decisions[i];
  return map;
}

template <typename T>
int eval_checkpoint(const Options& o) {
  const auto ck = load_checkpoint<T>(o.checkpoint);
  const auto [t1, t2] = load_inputs(o, ck.run.standardize);
  const auto labels = load_labels(o.labels);
  check_paired(t1, labels);
  const auto pixels = eval_pixels(o, ck.run, labels);
  const auto map = predict_with(o, ck, t1, t2, pixels);
  print_metrics(confusion(map, labels, pixels));
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.labels, "--labels");
  if (!o.pred.empty()) {
    if (!o.checkpoint.empty()) throw ConfigError("--pred and --checkpoint are mutually exclusive");
    const RunConfig run = run_config(o);
    const auto labels = load_labels(o.labels);
    const auto map = load_change_map(o.pred);
    const auto pixels = eval_pixels(o, run, labels);
    print_metrics(confusion(map, labels, pixels));
    return 0;
  }
  require(o.checkpoint, "--checkpoint");
  return use_f64(o) ? eval_checkpoint<double>(o) : eval_checkpoint<float>(o);
}

template <typename T>
int predict_as(const Options& o) {
  const auto ck = load_checkpoint<T>(o.checkpoint);
  const auto [t1, t2] = load_inputs(o, ck.run.standardize);
  const auto map = predict_map(t1, t2, ck.params, ck.run.model, o.threads);
  render_change_map(map, o.out);
  std::size_t changed = 0;
  for (auto d : map.decisions) changed += d;
  std::cout << json{{"status", "ok"}, {"map", o.out}, {"changed", changed}, {"pixels", map.decisions.size()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_predict(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  return use_f64(o) ? predict_as<double>(o) : predict_as<float>(o);
}

ModelConfig toy_model() {
  ModelConfig m;
  m.bands = 3;
  m.d = 8;
  m.blocks = 1;
  m.heads = 2;
  m.local_heads = 1;
  m.patch = 3;
  m.window = 3;
  return m;
}

int cmd_gradcheck(const Options& o) {
  if (!use_f64(o)) throw ConfigError("gradcheck requires --precision f64");
  ModelConfig model = o.config.empty() ? toy_model() : load_run_config(o.config).model;
  if (!o.variant.empty()) model.variant = parse_variant(o.variant);
  const std::uint64_t seed = o.seed.value_or(0);

  const auto params = ModelParams<double>::init(model, seed);
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  PatchPair sample;
  sample.a = Tensor<float>({model.bands, model.patch, model.patch});
  sample.b = Tensor<float>({model.bands, model.patch, model.patch});
  for (std::size_t i = 0; i < sample.a.size(); ++i) sample.a[i] = normal(rng);
  for (std::size_t i = 0; i < sample.b.size(); ++i) sample.b[i] = normal(rng);
  sample.label = 1;

  GradCheckOptions opts;
  opts.seed = seed;
  const auto report = grad_check_model(model, params, sample, opts);
  std::cout << json{{"status", report.passed ? "ok" : "fail"},
                    {"variant", to_string(model.variant)},
                    {"max_rel_error", report.max_rel_error},
                    {"checked", report.checked},
                    {"worst_param", report.worst_param},
                    {"offending", report.offending}}
                   .dump()
            << '\n';
  std::cout << report.summary() << '\n';
  return report.passed ? 0 : 1;
}

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLAFormer hyperspectral change detection"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration (JSON)");
    sub->add_option("--seed", o.seed, "seed for data split, initialization and shuffling");
    sub->add_option("--threads", o.threads, "worker threads (default 1, deterministic)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  };
  auto add_cubes = [&](CLI::App* sub) {
    sub->add_option("--t1", o.t1, "first-date cube header (JSON)");
    sub->add_option("--t2", o.t2, "second-date cube header (JSON)");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic scene pair and its labels");
  add_common(synth);
  synth->add_option("--out", o.out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train and write checkpoint plus history CSV");
  add_common(train_cmd);
  add_cubes(train_cmd);
  train_cmd->add_option("--labels", o.labels, "ground-truth PGM (0 unchanged, maxval changed)");
  train_cmd->add_option("--variant", o.variant, "full, no_glam, no_cgfn or basic");
  train_cmd->add_option("--out", o.out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "print OA and Kappa on the test split");
  add_common(eval_cmd);
  add_cubes(eval_cmd);
  eval_cmd->add_option("--labels", o.labels, "ground-truth PGM");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint manifest");
  eval_cmd->add_option("--pred", o.pred, "score an existing change-map PGM instead of a model");
  eval_cmd->add_option("--mask", o.mask, "test (default) or all")->check(CLI::IsMember({"test", "all"}));

  auto* predict_cmd = app.add_subcommand("predict", "render a full-scene change map");
  add_common(predict_cmd);
  add_cubes(predict_cmd);
  predict_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint manifest");
  predict_cmd->add_option("--out", o.out, "output PGM")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the model gradient");
  add_common(grad_cmd);
  grad_cmd->add_option("--variant", o.variant, "full, no_glam, no_cgfn or basic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) fail_line("usage", e.what());
    return code;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*predict_cmd) return cmd_predict(o);
    if (*grad_cmd) return cmd_gradcheck(o);
  } catch (const Error& e) {
    fail_line(e.kind(), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    fail_line("io", e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return 1;
  }
  return 1;
}
