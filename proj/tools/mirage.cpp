// mirage: train, evaluate and ablate fake-news detectors over feature bundles.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mirage/commands.hpp"

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Flag values are held as optionals so only flags the user actually passed
// override the config file.
struct Overrides {
  std::optional<std::string> bundle, model_dir, component, fusion_mode, early_variant, report_dir, output;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate, min_delta, l2_penalty, min_confidence;
  std::optional<std::size_t> max_epochs, batch_size, patience, min_crops;
  std::optional<unsigned> threads;
  std::optional<bool> standardize, calibrate_late;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-b,--bundle", o.bundle, "feature bundle to read");
  app->add_option("-m,--model-dir", o.model_dir, "model directory");
  app->add_option("-c,--component", o.component,
                  "image-linear, obj-cbm, mirage-img, text-linear, tbm, mirage-txt or mirage");
  app->add_option("--seed", o.seed, "master seed");
}

void add_training(CLI::App* app, Overrides& o) {
  app->add_option("--fusion", o.fusion_mode, "late, early-outputs or early-features");
  app->add_option("--early-variant", o.early_variant, "early head used by the ablation's -Late Fusion row");
  app->add_option("--lr", o.learning_rate, "learning rate");
  app->add_option("--max-epochs", o.max_epochs);
  app->add_option("--batch-size", o.batch_size, "0 for full batch");
  app->add_option("--patience", o.patience);
  app->add_option("--min-delta", o.min_delta);
  app->add_option("--l2", o.l2_penalty);
  app->add_option("--standardize", o.standardize, "z-score inputs (true/false)");
  app->add_option("--min-crops", o.min_crops, "minimum crops per object class");
  app->add_option("--min-confidence", o.min_confidence, "detector confidence cut-off for crops");
  app->add_option("--threads", o.threads, "workers for the object-class bank");
  app->add_option("--calibrate-late", o.calibrate_late, "calibrate the late-fusion threshold on eval");
}

void apply(mirage::RunConfig& cfg, const Overrides& o) {
  if (o.bundle) cfg.bundle = *o.bundle;
  if (o.model_dir) cfg.model_dir = *o.model_dir;
  if (o.component) cfg.component = mirage::parse_component(*o.component);
  if (o.fusion_mode) cfg.pipeline.fusion_mode = mirage::parse_fusion_mode(*o.fusion_mode);
  if (o.early_variant) cfg.pipeline.early_variant = mirage::parse_fusion_mode(*o.early_variant);
  if (o.report_dir) cfg.report_dir = *o.report_dir;
  if (o.output) cfg.output = *o.output;
  if (o.seed) cfg.seed = *o.seed;
  auto& t = cfg.pipeline.detector.train;
  if (o.learning_rate) t.learning_rate = *o.learning_rate;
  if (o.max_epochs) t.max_epochs = *o.max_epochs;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.patience) t.patience = *o.patience;
  if (o.min_delta) t.min_delta = *o.min_delta;
  if (o.l2_penalty) t.l2_penalty = *o.l2_penalty;
  if (o.standardize) t.standardize = *o.standardize;
  if (o.min_crops) cfg.pipeline.detector.min_crops_per_class = *o.min_crops;
  if (o.min_confidence) cfg.pipeline.detector.min_confidence = *o.min_confidence;
  if (o.threads) cfg.pipeline.detector.threads = *o.threads;
  if (o.calibrate_late) cfg.pipeline.calibrate_late_threshold = *o.calibrate_late;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detectors for AI-generated news image/caption pairs"};
  app.require_subcommand(1);
  std::string config_path;
  if (const char* env = std::getenv(mirage::kConfigEnvVar)) config_path = env;
  app.add_option("--config", config_path, std::string("JSON config file (default: $") + mirage::kConfigEnvVar + ")");

  Overrides o;
  mirage::SynthConfig synth_flags;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> n_train, n_eval, n_test;
  std::optional<double> image_signal, text_signal, object_signal, ood_shift;

  auto* gen = app.add_subcommand("gen-synthetic", "write a deterministic synthetic bundle");
  gen->add_option("-o,--out", o.output, "bundle path")->required();
  gen->add_option("--seed", synth_seed);
  gen->add_option("--n-train", n_train);
  gen->add_option("--n-eval", n_eval);
  gen->add_option("--n-test", n_test, "records per test source");
  gen->add_option("--image-signal", image_signal);
  gen->add_option("--text-signal", text_signal);
  gen->add_option("--object-signal", object_signal);
  gen->add_option("--ood-shift", ood_shift);

  auto* train = app.add_subcommand("train", "train a component and its prerequisites");
  add_common(train, o);
  add_training(train, o);

  auto* predict = app.add_subcommand("predict", "score every record of a bundle");
  add_common(predict, o);
  predict->add_option("-o,--out", o.output, "CSV output (default stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "per-source report over the test partition");
  add_common(evaluate, o);
  evaluate->add_option("-r,--report-dir", o.report_dir);

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ten ablation rows");
  add_common(ablate, o);
  add_training(ablate, o);
  ablate->add_option("-r,--report-dir", o.report_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    mirage::RunConfig cfg;
    try {
      if (!config_path.empty()) mirage::load_config_file(cfg, config_path);
      apply(cfg, o);
    } catch (const mirage::DataError& e) {
      // Bad selector values are operator mistakes, not data problems.
      throw mirage::UsageError(e.what());
    }

    if (gen->parsed()) {
      mirage::SynthConfig s = cfg.synthetic;
      if (synth_seed) s.seed = *synth_seed;
      if (n_train) s.n_train = *n_train;
      if (n_eval) s.n_eval = *n_eval;
      if (n_test) s.n_test_per_split = *n_test;
      if (image_signal) s.image_signal = *image_signal;
      if (text_signal) s.text_signal = *text_signal;
      if (object_signal) s.object_signal = *object_signal;
      if (ood_shift) s.ood_shift = *ood_shift;
      mirage::cmd_gen_synthetic(s, cfg.output);
    } else if (train->parsed()) {
      const auto out = mirage::cmd_train(cfg);
      std::cout << "trained " << mirage::to_string(cfg.component) << " into " << cfg.model_dir.string() << " ("
                << out.logs.size() << " heads)\n";
    } else if (predict->parsed()) {
      if (cfg.output.empty()) {
        mirage::cmd_predict(cfg, std::cout);
      } else {
        std::ofstream f(cfg.output, std::ios::trunc);
        if (!f) throw mirage::DataError("cannot write '" + cfg.output.string() + "'");
        mirage::cmd_predict(cfg, f);
      }
    } else if (evaluate->parsed()) {
      mirage::cmd_evaluate(cfg, std::cout);
    } else if (ablate->parsed()) {
      mirage::cmd_ablate(cfg, std::cout);
    }
  } catch (const mirage::UsageError& e) {
    std::cerr << "mirage: " << e.what() << "\n";
    return kUsage;
  } catch (const mirage::NumericError& e) {
    std::cerr << "mirage: numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const mirage::DataError& e) {
    std::cerr << "mirage: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "mirage: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
