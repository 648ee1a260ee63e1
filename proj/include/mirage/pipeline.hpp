#pragma once

// Named detector components, training with prerequisites, on-disk model
// directories and the ablation grid.

#include <array>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mirage/bundle.hpp"
#include "mirage/detector.hpp"
#include "mirage/eval.hpp"
#include "mirage/fusion.hpp"
#include "mirage/image_cbm.hpp"
#include "mirage/json_io.hpp"
#include "mirage/text_pipeline.hpp"

namespace mirage {

enum class Component { kImageLinear, kObjCbm, kMirageImg, kTextLinear, kTbm, kMirageTxt, kMirage };

inline constexpr std::array kAllComponents = {Component::kImageLinear, Component::kObjCbm,  Component::kMirageImg,
                                              Component::kTextLinear,  Component::kTbm,     Component::kMirageTxt,
                                              Component::kMirage};

inline std::string_view to_string(Component c) {
  switch (c) {
    case Component::kImageLinear: return "image-linear";
    case Component::kObjCbm: return "obj-cbm";
    case Component::kMirageImg: return "mirage-img";
    case Component::kTextLinear: return "text-linear";
    case Component::kTbm: return "tbm";
    case Component::kMirageTxt: return "mirage-txt";
    case Component::kMirage: return "mirage";
  }
  return "?";
}

inline Component parse_component(std::string_view s) {
  for (Component c : kAllComponents) {
    if (to_string(c) == s) return c;
  }
  throw DataError("unknown component '" + std::string(s) + "'");
}

inline Modality modality_of(Component c) {
  switch (c) {
    case Component::kImageLinear:
    case Component::kObjCbm:
    case Component::kMirageImg: return Modality::kImage;
    case Component::kTextLinear:
    case Component::kTbm:
    case Component::kMirageTxt: return Modality::kText;
    case Component::kMirage: return Modality::kMultimodal;
  }
  return Modality::kMultimodal;
}

struct PipelineOptions {
  DetectorConfig detector;
  FusionMode fusion_mode = FusionMode::kLate;
  // Variant used for the "-Late Fusion" ablation row.
  FusionMode early_variant = FusionMode::kEarlyOutputs;
  bool calibrate_late_threshold = false;
};

struct HeadLog {
  std::string head;
  TrainLog log;
};

/// Everything trained for one component, prerequisites included.
struct TrainedSuite {
  std::optional<CalibratedClassifier> image_linear;
  std::optional<ObjectClassBank> bank;
  std::optional<CalibratedClassifier> obj_cbm;
  std::optional<MirageImgModel> mirage_img;
  std::optional<CalibratedClassifier> text_linear;
  std::optional<CalibratedClassifier> tbm;
  std::optional<MirageTxtModel> mirage_txt;
  std::optional<MirageModel> mirage;
};

inline TrainedSuite train_component(Component component, std::span<const FeatureRecord> train,
                                    std::span<const FeatureRecord> eval, const DatasetManifest& manifest,
                                    const PipelineOptions& options, std::deque<HeadLog>* logs = nullptr) {
  if (train.empty()) throw DataError("no training records");
  const DetectorConfig& cfg = options.detector;
  TrainedSuite s;
  auto log_for = [&](std::string head) -> TrainLog* {
    if (logs == nullptr) return nullptr;
    logs->push_back({std::move(head), {}});
    return &logs->back().log;
  };

  const bool want_linear_img = component == Component::kImageLinear || component == Component::kMirageImg ||
                               component == Component::kMirage;
  const bool want_bank = component == Component::kObjCbm || component == Component::kMirageImg ||
                         component == Component::kMirage;
  if (want_linear_img) s.image_linear = train_image_linear(train, eval, cfg, log_for("image-linear"));
  if (want_bank) s.bank = train_bank_for(train, eval, manifest.object_class_names, manifest.crop_dim, cfg);
  if (component == Component::kObjCbm) s.obj_cbm = train_obj_cbm(train, eval, *s.bank, cfg, log_for("obj-cbm"));
  if (component == Component::kMirageImg || component == Component::kMirage) {
    s.mirage_img = assemble_mirage_img(*s.image_linear, *s.bank, train, eval, cfg, log_for("mirage-img"));
  }

  const bool want_linear_txt = component == Component::kTextLinear || component == Component::kMirageTxt ||
                               component == Component::kMirage;
  if (want_linear_txt) s.text_linear = train_text_linear(train, eval, cfg, log_for("text-linear"));
  if (component == Component::kTbm) s.tbm = train_tbm(train, eval, cfg, log_for("tbm"));
  if (component == Component::kMirageTxt || component == Component::kMirage) {
    s.mirage_txt = assemble_mirage_txt(*s.text_linear, train, eval, cfg, log_for("mirage-txt"));
  }

  if (component == Component::kMirage) {
    if (options.fusion_mode == FusionMode::kLate) {
      double threshold = 0.5;
      if (options.calibrate_late_threshold && !eval.empty()) {
        threshold = calibrate_late_threshold(*s.mirage_img, *s.mirage_txt, eval);
      }
      s.mirage = make_late(*s.mirage_img, *s.mirage_txt, threshold);
    } else {
      s.mirage = train_early(train, eval, *s.mirage_img, *s.mirage_txt, options.fusion_mode, cfg,
                             log_for(std::string("fusion-") + std::string(to_string(options.fusion_mode))));
    }
  }
  return s;
}

// Detectors over trained models. Models are copied into shared storage so a
// Detector stays valid independently of the suite it came from.

inline Detector image_linear_detector(std::string name, CalibratedClassifier c) {
  const double t = c.threshold;
  auto m = std::make_shared<const CalibratedClassifier>(std::move(c));
  return Detector(std::move(name), Modality::kImage, [m](const FeatureRecord& r) { return m->score(r.image_embedding); },
                  t);
}

inline Detector text_linear_detector(std::string name, CalibratedClassifier c) {
  const double t = c.threshold;
  auto m = std::make_shared<const CalibratedClassifier>(std::move(c));
  return Detector(std::move(name), Modality::kText, [m](const FeatureRecord& r) { return m->score(r.text_embedding); },
                  t);
}

inline Detector tbm_detector(std::string name, CalibratedClassifier c) {
  const double t = c.threshold;
  auto m = std::make_shared<const CalibratedClassifier>(std::move(c));
  return Detector(std::move(name), Modality::kText, [m](const FeatureRecord& r) { return m->score(r.text_concepts); },
                  t);
}

inline Detector obj_cbm_detector(std::string name, ObjectClassBank bank, CalibratedClassifier c) {
  const double t = c.threshold;
  auto b = std::make_shared<const ObjectClassBank>(std::move(bank));
  auto m = std::make_shared<const CalibratedClassifier>(std::move(c));
  return Detector(std::move(name), Modality::kImage,
                  [b, m](const FeatureRecord& r) { return m->score(assemble_concepts(r, *b).scores); }, t);
}

inline Detector mirage_img_detector(std::string name, MirageImgModel model) {
  const double t = model.bottleneck.threshold;
  auto m = std::make_shared<const MirageImgModel>(std::move(model));
  return Detector(std::move(name), Modality::kImage, [m](const FeatureRecord& r) { return score_img(*m, r); }, t);
}

inline Detector mirage_txt_detector(std::string name, MirageTxtModel model) {
  const double t = model.tbm_bottleneck.threshold;
  auto m = std::make_shared<const MirageTxtModel>(std::move(model));
  return Detector(std::move(name), Modality::kText, [m](const FeatureRecord& r) { return score_txt(*m, r); }, t);
}

inline Detector mirage_detector(std::string name, MirageModel model) {
  model.validate();
  const double t = decision_threshold(model);
  auto m = std::make_shared<const MirageModel>(std::move(model));
  return Detector(std::move(name), Modality::kMultimodal, [m](const FeatureRecord& r) { return score_mirage(*m, r); },
                  t);
}

inline Detector detector_for(Component c, const TrainedSuite& s) {
  const std::string name(to_string(c));
  auto need = [&](const auto& opt) -> const auto& {
    if (!opt) throw DataError("model for component '" + name + "' is incomplete");
    return *opt;
  };
  switch (c) {
    case Component::kImageLinear: return image_linear_detector(name, need(s.image_linear));
    case Component::kObjCbm: return obj_cbm_detector(name, need(s.bank), need(s.obj_cbm));
    case Component::kMirageImg: return mirage_img_detector(name, need(s.mirage_img));
    case Component::kTextLinear: return text_linear_detector(name, need(s.text_linear));
    case Component::kTbm: return tbm_detector(name, need(s.tbm));
    case Component::kMirageTxt: return mirage_txt_detector(name, need(s.mirage_txt));
    case Component::kMirage: return mirage_detector(name, need(s.mirage));
  }
  throw DataError("unknown component");
}

// Model directory layout. Each component has an entry file <component>.json;
// the object-class bank lives in bank/ and the fused manifest references the
// unimodal entry files by name.

inline constexpr std::string_view kBankDir = "bank";

inline std::filesystem::path entry_file(const std::filesystem::path& dir, Component c) {
  return dir / (std::string(to_string(c)) + ".json");
}

inline nlohmann::json to_json(const MirageImgModel& m) {
  return {{"kind", "mirage-img"},
          {"global_linear", to_json(m.global_linear)},
          {"bank", kBankDir},
          {"bottleneck", to_json(m.bottleneck)}};
}

inline nlohmann::json to_json(const MirageTxtModel& m) {
  return {{"kind", "mirage-txt"}, {"text_linear", to_json(m.text_linear)}, {"bottleneck", to_json(m.tbm_bottleneck)}};
}

inline nlohmann::json fused_manifest(const MirageModel& m) {
  nlohmann::json j = {{"kind", "mirage"},
                      {"mode", to_string(m.mode)},
                      {"img", entry_file("", Component::kMirageImg).string()},
                      {"txt", entry_file("", Component::kMirageTxt).string()},
                      {"late_threshold", m.late_threshold}};
  if (m.fusion_head) j["fusion_head"] = to_json(*m.fusion_head);
  return j;
}

inline void save_suite(const TrainedSuite& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto classifier_entry = [&](Component c, const CalibratedClassifier& m) {
    write_json_file(entry_file(dir, c), {{"kind", to_string(c)}, {"classifier", to_json(m)}});
  };
  const ObjectClassBank* bank = s.bank ? &*s.bank : (s.mirage_img ? &s.mirage_img->bank : nullptr);
  if (bank) save_bank(*bank, dir / kBankDir);
  if (s.image_linear) classifier_entry(Component::kImageLinear, *s.image_linear);
  if (s.text_linear) classifier_entry(Component::kTextLinear, *s.text_linear);
  if (s.tbm) classifier_entry(Component::kTbm, *s.tbm);
  if (s.obj_cbm) {
    write_json_file(entry_file(dir, Component::kObjCbm),
                    {{"kind", "obj-cbm"}, {"bank", kBankDir}, {"bottleneck", to_json(*s.obj_cbm)}});
  }
  if (s.mirage_img) write_json_file(entry_file(dir, Component::kMirageImg), to_json(*s.mirage_img));
  if (s.mirage_txt) write_json_file(entry_file(dir, Component::kMirageTxt), to_json(*s.mirage_txt));
  if (s.mirage) write_json_file(entry_file(dir, Component::kMirage), fused_manifest(*s.mirage));
}

namespace detail {

inline void expect_kind(const nlohmann::json& j, std::string_view kind, const std::filesystem::path& path) {
  if (j.value("kind", std::string{}) != kind) {
    throw DataError(path.string() + ": expected a '" + std::string(kind) + "' model file");
  }
}

inline MirageImgModel load_mirage_img(const std::filesystem::path& dir, const std::filesystem::path& file) {
  const auto j = read_json_file(file);
  expect_kind(j, "mirage-img", file);
  MirageImgModel m{calibrated_from_json(j.at("global_linear")), load_bank(dir / j.at("bank").get<std::string>()),
                   calibrated_from_json(j.at("bottleneck"))};
  if (m.bottleneck.model.input_dim() != m.bank.size() + 1) throw DataError(file.string() + ": bottleneck width mismatch");
  return m;
}

inline MirageTxtModel load_mirage_txt(const std::filesystem::path& file) {
  const auto j = read_json_file(file);
  expect_kind(j, "mirage-txt", file);
  return {calibrated_from_json(j.at("text_linear")), calibrated_from_json(j.at("bottleneck"))};
}

}  // namespace detail

/// Loads what `component` needs from a model directory.
inline TrainedSuite load_component(Component c, const std::filesystem::path& dir) {
  const auto file = entry_file(dir, c);
  if (!std::filesystem::exists(file)) throw DataError("missing model file '" + file.string() + "'");
  TrainedSuite s;
  switch (c) {
    case Component::kImageLinear:
    case Component::kTextLinear:
    case Component::kTbm: {
      const auto j = read_json_file(file);
      detail::expect_kind(j, to_string(c), file);
      auto m = calibrated_from_json(j.at("classifier"));
      (c == Component::kImageLinear ? s.image_linear : c == Component::kTextLinear ? s.text_linear : s.tbm) = m;
      break;
    }
    case Component::kObjCbm: {
      const auto j = read_json_file(file);
      detail::expect_kind(j, "obj-cbm", file);
      s.bank = load_bank(dir / j.at("bank").get<std::string>());
      s.obj_cbm = calibrated_from_json(j.at("bottleneck"));
      if (s.obj_cbm->model.input_dim() != s.bank->size()) throw DataError(file.string() + ": bottleneck width mismatch");
      break;
    }
    case Component::kMirageImg: s.mirage_img = detail::load_mirage_img(dir, file); break;
    case Component::kMirageTxt: s.mirage_txt = detail::load_mirage_txt(file); break;
    case Component::kMirage: {
      const auto j = read_json_file(file);
      detail::expect_kind(j, "mirage", file);
      MirageModel m;
      m.img = detail::load_mirage_img(dir, dir / j.at("img").get<std::string>());
      m.txt = detail::load_mirage_txt(dir / j.at("txt").get<std::string>());
      m.mode = parse_fusion_mode(j.at("mode").get<std::string>());
      m.late_threshold = j.value("late_threshold", 0.5);
      if (j.contains("fusion_head")) m.fusion_head = calibrated_from_json(j.at("fusion_head"));
      m.validate();
      s.mirage = std::move(m);
      break;
    }
  }
  return s;
}

// Ablation grid: the full detectors and their single-component removals.

inline constexpr std::array<std::string_view, 10> kAblationRows = {
    "MiRAGe-I",           "MiRAGe-I (-CBM)",   "MiRAGe-I (-Linear)", "MiRAGe-T", "MiRAGe-T (-TBM)",
    "MiRAGe-T (-Linear)", "MiRAGe",            "MiRAGe (-Late Fusion)", "MiRAGe (-CBMs)", "MiRAGe (-Linears)"};

struct AblationResult {
  std::vector<NamedReport> rows;
  std::deque<HeadLog> logs;
};

/// Trains every head once with the shared seed and evaluates the ten rows on
/// the test groups. Shared heads are reused, so e.g. the "-CBM" row is exactly
/// the standalone image linear probe.
inline AblationResult run_ablation(const Partitions& parts, const DatasetManifest& manifest,
                                   const PipelineOptions& options, const EvalOptions& eval_options = {}) {
  if (parts.train.empty()) throw DataError("ablation needs a training partition");
  const DetectorConfig& cfg = options.detector;
  AblationResult out;
  auto log_for = [&](std::string head) {
    out.logs.push_back({std::move(head), {}});
    return &out.logs.back().log;
  };
  const auto& train = parts.train;
  const auto& eval = parts.eval;

  CalibratedClassifier image_linear = train_image_linear(train, eval, cfg, log_for("image-linear"));
  ObjectClassBank bank = train_bank_for(train, eval, manifest.object_class_names, manifest.crop_dim, cfg);
  CalibratedClassifier obj_cbm = train_obj_cbm(train, eval, bank, cfg, log_for("obj-cbm"));
  MirageImgModel mirage_img = assemble_mirage_img(image_linear, bank, train, eval, cfg, log_for("mirage-img"));

  CalibratedClassifier text_linear = train_text_linear(train, eval, cfg, log_for("text-linear"));
  CalibratedClassifier tbm = train_tbm(train, eval, cfg, log_for("tbm"));
  MirageTxtModel mirage_txt = assemble_mirage_txt(text_linear, train, eval, cfg, log_for("mirage-txt"));

  double late_threshold = 0.5;
  if (options.calibrate_late_threshold && !eval.empty()) {
    late_threshold = calibrate_late_threshold(mirage_img, mirage_txt, eval);
  }
  MirageModel late = make_late(mirage_img, mirage_txt, late_threshold);
  MirageModel early = train_early(train, eval, mirage_img, mirage_txt, options.early_variant, cfg,
                                  log_for(std::string("fusion-") + std::string(to_string(options.early_variant))));

  const std::vector<SourceGroup> groups = group_by_source(parts.test);
  auto add = [&](std::string_view row, Detector d, std::string mode = {}) {
    EvalOptions eo = eval_options;
    eo.mode = std::move(mode);
    out.rows.push_back({std::string(row), evaluate(d, groups, eo)});
  };
  add(kAblationRows[0], mirage_img_detector("mirage-img", mirage_img));
  add(kAblationRows[1], image_linear_detector("image-linear", image_linear));
  add(kAblationRows[2], obj_cbm_detector("obj-cbm", bank, obj_cbm));
  add(kAblationRows[3], mirage_txt_detector("mirage-txt", mirage_txt));
  add(kAblationRows[4], text_linear_detector("text-linear", text_linear));
  add(kAblationRows[5], tbm_detector("tbm", tbm));
  add(kAblationRows[6], mirage_detector("mirage", late), "late");
  add(kAblationRows[7], mirage_detector("mirage", early), std::string(to_string(options.early_variant)));
  add(kAblationRows[8],
      late_fused("mirage-linears", image_linear_detector("image-linear", image_linear),
                 text_linear_detector("text-linear", text_linear), late_threshold),
      "late");
  add(kAblationRows[9],
      late_fused("mirage-bottlenecks", obj_cbm_detector("obj-cbm", bank, obj_cbm), tbm_detector("tbm", tbm),
                 late_threshold),
      "late");
  return out;
}

}  // namespace mirage
