#pragma once

// Image detectors: the global image linear probe, the object-class concept
// bottleneck (one crop classifier per object class, max-pooled into a concept
// vector) and the MiRAGe-Img ensemble that stacks both.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mirage/detector.hpp"
#include "mirage/json_io.hpp"
#include "mirage/linear.hpp"
#include "mirage/types.hpp"

namespace mirage {

enum class ConceptLayout { kObjects, kObjectsWithLinear, kText, kTextWithLinear };

/// Bottleneck input. Width is 300/301 for image layouts and 18/19 for text by
/// default; the appended linear score, when present, is always the last slot.
struct ConceptVector {
  Vector scores;
  ConceptLayout layout = ConceptLayout::kObjects;

  static ConceptVector make(Vector scores, ConceptLayout layout, std::size_t base_width) {
    const bool appended = layout == ConceptLayout::kObjectsWithLinear || layout == ConceptLayout::kTextWithLinear;
    if (scores.size() != base_width + (appended ? 1 : 0)) throw DataError("concept vector width does not match layout");
    for (double s : scores) {
      if (!(s >= 0.0 && s <= 1.0)) throw DataError("concept score outside [0,1]");
    }
    return {std::move(scores), layout};
  }

  friend bool operator==(const ConceptVector&, const ConceptVector&) = default;
};

struct ClassCrops {
  std::vector<Vector> crops;
  std::vector<int> labels;

  std::size_t size() const { return crops.size(); }
  bool has_both_labels() const {
    return std::find(labels.begin(), labels.end(), 0) != labels.end() &&
           std::find(labels.begin(), labels.end(), 1) != labels.end();
  }
};

using CropDataset = std::vector<ClassCrops>;

inline CropDataset build_crop_dataset(std::span<const FeatureRecord> records, std::size_t n_classes,
                                      double min_confidence = 0.0) {
  CropDataset buckets(n_classes);
  for (const auto& r : records) {
    for (const auto& d : r.objects) {
      if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= n_classes) {
        throw DataError("record '" + r.id + "': class_id " + std::to_string(d.class_id) + " outside vocabulary");
      }
      if (d.detector_confidence < min_confidence) continue;
      auto& bucket = buckets[static_cast<std::size_t>(d.class_id)];
      bucket.crops.push_back(d.crop_embedding);
      bucket.labels.push_back(r.label.value());
    }
  }
  return buckets;
}

struct ObjectClassBank {
  std::vector<std::string> vocabulary;
  std::vector<std::optional<LinearModel>> classifiers;
  std::size_t crop_dim = 0;
  std::size_t min_crops_per_class = 10;
  double min_confidence = 0.0;

  std::size_t size() const { return vocabulary.size(); }
  std::size_t trained_count() const {
    return static_cast<std::size_t>(std::count_if(classifiers.begin(), classifiers.end(),
                                                  [](const auto& c) { return c.has_value(); }));
  }

  friend bool operator==(const ObjectClassBank&, const ObjectClassBank&) = default;
};

namespace detail {

inline std::optional<LinearModel> train_class(const ClassCrops& train_crops, const ClassCrops* eval_crops,
                                              std::size_t crop_dim, std::size_t class_id,
                                              const DetectorConfig& config) {
  if (train_crops.size() < config.min_crops_per_class || !train_crops.has_both_labels()) return std::nullopt;
  TrainConfig tc = config.train;
  tc.seed = config.train.seed + class_id;
  const FeatureMatrix x = FeatureMatrix::from_rows(train_crops.crops, crop_dim);
  FeatureMatrix xe(0, crop_dim);
  std::span<const int> ye;
  if (eval_crops != nullptr && eval_crops->size() > 0) {
    xe = FeatureMatrix::from_rows(eval_crops->crops, crop_dim);
    ye = eval_crops->labels;
  }
  return train(x, train_crops.labels, xe, ye, tc);
}

}  // namespace detail

/// Trains one crop classifier per object class. Classes with fewer than
/// min_crops_per_class crops or a single label stay absent. Each class uses
/// seed + class_id, so the result is independent of processing order and of
/// `config.threads`.
inline ObjectClassBank train_bank(const CropDataset& crops, std::vector<std::string> vocabulary,
                                  std::size_t crop_dim, const DetectorConfig& config,
                                  const CropDataset* eval_crops = nullptr,
                                  std::span<const std::size_t> class_order = {}) {
  if (crops.size() != vocabulary.size()) throw DataError("crop dataset and vocabulary differ in size");
  if (eval_crops != nullptr && eval_crops->size() != crops.size()) {
    throw DataError("eval crop dataset and vocabulary differ in size");
  }
  ObjectClassBank bank;
  bank.vocabulary = std::move(vocabulary);
  bank.classifiers.resize(crops.size());
  bank.crop_dim = crop_dim;
  bank.min_crops_per_class = config.min_crops_per_class;
  bank.min_confidence = config.min_confidence;

  std::vector<std::size_t> order(class_order.begin(), class_order.end());
  if (order.empty()) {
    order.resize(crops.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  if (order.size() != crops.size()) throw DataError("class order must list every class exactly once");

  auto work = [&](std::size_t worker, std::size_t n_workers) {
    for (std::size_t k = worker; k < order.size(); k += n_workers) {
      const std::size_t c = order[k];
      bank.classifiers[c] =
          detail::train_class(crops[c], eval_crops ? &(*eval_crops)[c] : nullptr, crop_dim, c, config);
    }
  };
  const std::size_t n_workers = std::max(1u, config.threads);
  if (n_workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w, n_workers);
  }
  return bank;
}

/// Component c is the highest crop score among detections of class c, or 0
/// when the class is undetected or its classifier is absent.
inline ConceptVector assemble_concepts(const FeatureRecord& record, const ObjectClassBank& bank) {
  Vector scores(bank.size(), 0.0);
  for (const auto& d : record.objects) {
    if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= bank.size()) {
      throw DataError("record '" + record.id + "': class_id " + std::to_string(d.class_id) + " outside vocabulary");
    }
    if (d.crop_embedding.size() != bank.crop_dim) {
      throw DataError("record '" + record.id + "': crop embedding has length " +
                      std::to_string(d.crop_embedding.size()) + ", bank expects " + std::to_string(bank.crop_dim));
    }
    if (d.detector_confidence < bank.min_confidence) continue;
    const auto c = static_cast<std::size_t>(d.class_id);
    if (!bank.classifiers[c]) continue;
    scores[c] = std::max(scores[c], predict_score(*bank.classifiers[c], d.crop_embedding));
  }
  return {std::move(scores), ConceptLayout::kObjects};
}

/// [300 object concepts || global image-linear score]; the linear score sits at index bank.size().
inline Vector stacked_image_features(const FeatureRecord& record, const ObjectClassBank& bank,
                                     const CalibratedClassifier& global_linear) {
  Vector v = assemble_concepts(record, bank).scores;
  v.push_back(global_linear.score(record.image_embedding));
  return v;
}

struct MirageImgModel {
  CalibratedClassifier global_linear;
  ObjectClassBank bank;
  CalibratedClassifier bottleneck;

  friend bool operator==(const MirageImgModel&, const MirageImgModel&) = default;
};

inline CalibratedClassifier train_image_linear(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                               const DetectorConfig& config, TrainLog* log = nullptr) {
  if (train.empty()) throw DataError("image linear probe: empty training set");
  const std::size_t dim = image_dim_of(train);
  auto row = [](const FeatureRecord& r) -> const Vector& { return r.image_embedding; };
  return train_calibrated(feature_matrix(train, dim, row), labels_of(train), feature_matrix(eval, dim, row),
                          labels_of(eval), config.train, log);
}

inline ObjectClassBank train_bank_for(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                      const std::vector<std::string>& vocabulary, std::size_t crop_dim,
                                      const DetectorConfig& config) {
  const CropDataset train_crops = build_crop_dataset(train, vocabulary.size(), config.min_confidence);
  const CropDataset eval_crops = build_crop_dataset(eval, vocabulary.size(), config.min_confidence);
  return train_bank(train_crops, vocabulary, crop_dim, config, &eval_crops);
}

/// CBM-only head: calibrated bottleneck over the bare concept vectors.
inline CalibratedClassifier train_obj_cbm(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                          const ObjectClassBank& bank, const DetectorConfig& config,
                                          TrainLog* log = nullptr) {
  auto row = [&](const FeatureRecord& r) { return assemble_concepts(r, bank).scores; };
  return train_calibrated(feature_matrix(train, bank.size(), row), labels_of(train),
                          feature_matrix(eval, bank.size(), row), labels_of(eval), config.train, log);
}

/// Stacks an already trained global probe and bank under a new bottleneck.
inline MirageImgModel assemble_mirage_img(CalibratedClassifier global_linear, ObjectClassBank bank,
                                          std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                          const DetectorConfig& config, TrainLog* log = nullptr) {
  auto row = [&](const FeatureRecord& r) { return stacked_image_features(r, bank, global_linear); };
  const std::size_t width = bank.size() + 1;
  CalibratedClassifier bottleneck = train_calibrated(feature_matrix(train, width, row), labels_of(train),
                                                     feature_matrix(eval, width, row), labels_of(eval), config.train, log);
  return {std::move(global_linear), std::move(bank), std::move(bottleneck)};
}

inline MirageImgModel train_mirage_img(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                       const std::vector<std::string>& vocabulary, std::size_t crop_dim,
                                       const DetectorConfig& config) {
  CalibratedClassifier global = train_image_linear(train, eval, config);
  ObjectClassBank bank = train_bank_for(train, eval, vocabulary, crop_dim, config);
  return assemble_mirage_img(std::move(global), std::move(bank), train, eval, config);
}

inline double score_img(const MirageImgModel& model, const FeatureRecord& record) {
  return model.bottleneck.score(stacked_image_features(record, model.bank, model.global_linear));
}

inline Prediction predict_img(const MirageImgModel& model, const FeatureRecord& record) {
  return thresholded(score_img(model, record), model.bottleneck.threshold);
}

// Bank persistence: a directory holding bank.json (vocabulary, settings, one
// entry per class naming its model file or null when absent) and class_NNN.json files.

inline nlohmann::json to_json(const ObjectClassBank& bank) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : bank.classifiers) classes.push_back(c ? to_json(*c) : nlohmann::json(nullptr));
  return {{"vocabulary", bank.vocabulary},
          {"crop_dim", bank.crop_dim},
          {"min_crops_per_class", bank.min_crops_per_class},
          {"min_confidence", bank.min_confidence},
          {"classifiers", std::move(classes)}};
}

inline std::string class_file_name(std::size_t class_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03zu.json", class_id);
  return buf;
}

inline void save_bank(const ObjectClassBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  // Drop class files left by an earlier bank so the directory mirrors this one.
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("class_") && entry.path().extension() == ".json") std::filesystem::remove(entry.path());
  }
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t c = 0; c < bank.size(); ++c) {
    if (bank.classifiers[c]) {
      const std::string name = class_file_name(c);
      write_json_file(dir / name, to_json(*bank.classifiers[c]));
      files.push_back(name);
    } else {
      files.push_back(nullptr);
    }
  }
  write_json_file(dir / "bank.json", {{"vocabulary", bank.vocabulary},
                                      {"crop_dim", bank.crop_dim},
                                      {"min_crops_per_class", bank.min_crops_per_class},
                                      {"min_confidence", bank.min_confidence},
                                      {"classifiers", std::move(files)}});
}

inline ObjectClassBank load_bank(const std::filesystem::path& dir) {
  const nlohmann::json j = read_json_file(dir / "bank.json");
  ObjectClassBank bank;
  bank.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  bank.crop_dim = j.at("crop_dim").get<std::size_t>();
  bank.min_crops_per_class = j.at("min_crops_per_class").get<std::size_t>();
  bank.min_confidence = j.at("min_confidence").get<double>();
  const auto& files = j.at("classifiers");
  if (files.size() != bank.vocabulary.size()) throw DataError("bank: classifier list and vocabulary differ in length");
  for (const auto& f : files) {
    if (f.is_null()) {
      bank.classifiers.emplace_back(std::nullopt);
      continue;
    }
    LinearModel m = linear_model_from_json(read_json_file(dir / f.get<std::string>()));
    if (m.input_dim() != bank.crop_dim) throw DataError("bank: classifier input_dim does not match crop_dim");
    bank.classifiers.emplace_back(std::move(m));
  }
  return bank;
}

}  // namespace mirage
