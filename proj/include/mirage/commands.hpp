#pragma once

// Implementations behind the `mirage` CLI subcommands. Kept in the library so
// tests can drive them without spawning processes.

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/bundle.hpp"
#include "mirage/eval.hpp"
#include "mirage/json_io.hpp"
#include "mirage/pipeline.hpp"
#include "mirage/synth.hpp"

namespace mirage {

inline constexpr const char* kConfigEnvVar = "MIRAGE_CONFIG";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::filesystem::path bundle;
  std::filesystem::path model_dir = "models";
  Component component = Component::kMirage;
  PipelineOptions pipeline;
  std::filesystem::path report_dir = "reports";
  std::filesystem::path output;
  SynthConfig synthetic;
  std::uint64_t seed = 0;
};

inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Fields present in `j` override `cfg`. Unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  static const std::vector<std::string> known = {"bundle",     "model_dir",      "component",      "fusion_mode",
                                                 "early_variant", "calibrate_late", "report_dir",  "output",
                                                 "seed",       "train",          "bank",           "synthetic"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw UsageError("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("bundle")) cfg.bundle = j.at("bundle").get<std::string>();
    if (j.contains("model_dir")) cfg.model_dir = j.at("model_dir").get<std::string>();
    if (j.contains("component")) cfg.component = parse_component(j.at("component").get<std::string>());
    if (j.contains("fusion_mode")) cfg.pipeline.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
    if (j.contains("early_variant")) {
      cfg.pipeline.early_variant = parse_fusion_mode(j.at("early_variant").get<std::string>());
    }
    if (j.contains("calibrate_late")) cfg.pipeline.calibrate_late_threshold = j.at("calibrate_late").get<bool>();
    if (j.contains("report_dir")) cfg.report_dir = j.at("report_dir").get<std::string>();
    if (j.contains("output")) cfg.output = j.at("output").get<std::string>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      TrainConfig& tc = cfg.pipeline.detector.train;
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.max_epochs = t.value("max_epochs", tc.max_epochs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.patience = t.value("patience", tc.patience);
      tc.min_delta = t.value("min_delta", tc.min_delta);
      tc.l2_penalty = t.value("l2_penalty", tc.l2_penalty);
      tc.standardize = t.value("standardize", tc.standardize);
    }
    if (j.contains("bank")) {
      const auto& b = j.at("bank");
      DetectorConfig& dc = cfg.pipeline.detector;
      dc.min_crops_per_class = b.value("min_crops_per_class", dc.min_crops_per_class);
      dc.min_confidence = b.value("min_confidence", dc.min_confidence);
      dc.threads = b.value("threads", dc.threads);
    }
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      SynthConfig& sc = cfg.synthetic;
      sc.seed = s.value("seed", sc.seed);
      sc.n_train = s.value("n_train", sc.n_train);
      sc.n_eval = s.value("n_eval", sc.n_eval);
      sc.n_test_per_split = s.value("n_test_per_split", sc.n_test_per_split);
      sc.image_dim = s.value("image_dim", sc.image_dim);
      sc.text_dim = s.value("text_dim", sc.text_dim);
      sc.crop_dim = s.value("crop_dim", sc.crop_dim);
      sc.image_signal = s.value("image_signal", sc.image_signal);
      sc.text_signal = s.value("text_signal", sc.text_signal);
      sc.object_signal = s.value("object_signal", sc.object_signal);
      sc.mean_objects_per_record = s.value("mean_objects_per_record", sc.mean_objects_per_record);
      sc.n_object_classes = s.value("n_object_classes", sc.n_object_classes);
      sc.n_text_concepts = s.value("n_text_concepts", sc.n_text_concepts);
      sc.ood_shift = s.value("ood_shift", sc.ood_shift);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const DataError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  apply_config_json(cfg, j);
}

inline void seed_everything(RunConfig& cfg) { cfg.pipeline.detector.train.seed = cfg.seed; }

// gen-synthetic

inline void cmd_gen_synthetic(const SynthConfig& config, const std::filesystem::path& out) {
  const Bundle b = generate(config);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_bundle(b.manifest, b.records, out);
}

// train

inline void append_train_log(const std::filesystem::path& path, const RunConfig& cfg,
                             const std::deque<HeadLog>& logs) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write training log '" + path.string() + "'");
  out << "# run component=" << to_string(cfg.component) << " seed=" << cfg.seed << " time=" << utc_timestamp()
      << "\n";
  for (const auto& h : logs) {
    for (const auto& e : h.log.epochs) {
      out << "epoch head=" << h.head << " epoch=" << e.epoch << " train_loss=" << shortest(e.train_loss)
          << " eval_loss=" << (e.eval_loss ? shortest(*e.eval_loss) : std::string("nan")) << " best=" << (e.best ? 1 : 0)
          << "\n";
    }
    out << "done head=" << h.head << " epochs=" << (h.log.epochs.empty() ? 0 : h.log.epochs.back().epoch)
        << " best_epoch=" << h.log.best_epoch << " plateau=" << (h.log.stopped_on_plateau ? 1 : 0) << "\n";
  }
}

struct TrainOutcome {
  TrainedSuite suite;
  std::deque<HeadLog> logs;
};

inline TrainOutcome cmd_train(RunConfig cfg) {
  if (cfg.bundle.empty()) throw UsageError("train: no bundle given");
  seed_everything(cfg);
  const Bundle b = load_bundle(cfg.bundle);
  const Partitions parts = split(b.records, b.manifest);
  if (parts.train.empty()) throw DataError("train: bundle has no train partition");
  TrainOutcome out;
  out.suite = train_component(cfg.component, parts.train, parts.eval, b.manifest, cfg.pipeline, &out.logs);
  save_suite(out.suite, cfg.model_dir);
  append_train_log(cfg.model_dir / "train.log", cfg, out.logs);
  return out;
}

// predict

inline std::size_t cmd_predict(const RunConfig& cfg, std::ostream& out) {
  if (cfg.bundle.empty()) throw UsageError("predict: no bundle given");
  const TrainedSuite suite = load_component(cfg.component, cfg.model_dir);
  const Detector det = detector_for(cfg.component, suite);
  const Bundle b = load_bundle(cfg.bundle);
  out << "id,score,label,model\n";
  for (const auto& r : b.records) {
    const Prediction p = det.predict(r);
    out << r.id << ',' << shortest(p.score) << ',' << p.label << ',' << det.name() << '\n';
  }
  return b.records.size();
}

// evaluate

/// Test records of a bundle: the test partition when splits are assigned,
/// every record otherwise.
inline std::vector<FeatureRecord> test_records(const Bundle& b) {
  if (b.manifest.split_assignments.empty()) return b.records;
  return split(b.records, b.manifest).test;
}

inline void write_report_files(const EvalReport& rep, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream txt(dir / (stem + ".txt"), std::ios::trunc);
    if (!txt) throw DataError("cannot write report in '" + dir.string() + "'");
    txt << render_table(rep);
  }
  write_json_file(dir / (stem + ".json"), to_json(rep));
}

inline EvalReport cmd_evaluate(const RunConfig& cfg, std::ostream& console) {
  if (cfg.bundle.empty()) throw UsageError("evaluate: no bundle given");
  const TrainedSuite suite = load_component(cfg.component, cfg.model_dir);
  const Detector det = detector_for(cfg.component, suite);
  const Bundle b = load_bundle(cfg.bundle);
  const auto groups = group_by_source(test_records(b));
  EvalOptions eo;
  eo.seed = cfg.seed;
  eo.timestamp = utc_timestamp();
  if (cfg.component == Component::kMirage && suite.mirage) eo.mode = std::string(to_string(suite.mirage->mode));
  const EvalReport rep = evaluate(det, groups, eo);
  write_report_files(rep, cfg.report_dir, "report");
  auto print = [&](const MetricRow& r, const char* label) {
    console << label << " acc=" << shortest(r.accuracy) << " f1=" << shortest(r.f1)
            << " ap=" << (r.average_precision ? shortest(*r.average_precision) : std::string("-")) << " n=" << r.n
            << "\n";
  };
  if (const MetricRow* id = rep.row(source::kNytMj)) print(*id, "ID");
  if (rep.ood_avg) print(*rep.ood_avg, "OOD-AVG");
  for (const auto& w : rep.warnings) console << "warning: " << w << "\n";
  return rep;
}

// ablate

inline std::string slug(std::string_view row) {
  std::string s;
  for (char c : row) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!s.empty() && s.back() != '_') {
      s.push_back('_');
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

inline AblationResult cmd_ablate(RunConfig cfg, std::ostream& console) {
  if (cfg.bundle.empty()) throw UsageError("ablate: no bundle given");
  seed_everything(cfg);
  const Bundle b = load_bundle(cfg.bundle);
  const Partitions parts = split(b.records, b.manifest);
  EvalOptions eo;
  eo.seed = cfg.seed;
  eo.timestamp = utc_timestamp();
  AblationResult res = run_ablation(parts, b.manifest, cfg.pipeline, eo);
  const auto dir = cfg.report_dir / "ablation";
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& row : res.rows) {
    write_report_files(row.report, dir, slug(row.name));
    summary.push_back({{"row", row.name}, {"report", to_json(row.report)}});
  }
  const std::string table = render_summary(res.rows) + "\n" + render_classwise_summary(res.rows);
  {
    std::ofstream txt(cfg.report_dir / "ablation.txt", std::ios::trunc);
    if (!txt) throw DataError("cannot write '" + (cfg.report_dir / "ablation.txt").string() + "'");
    txt << table;
  }
  write_json_file(cfg.report_dir / "ablation.json", summary);
  console << table;
  return res;
}

}  // namespace mirage
