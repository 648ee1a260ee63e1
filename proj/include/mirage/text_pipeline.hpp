#pragma once

// Caption detectors: text linear probe, text bottleneck model (TBM) over the
// precomputed concept scores, and the MiRAGe-Txt ensemble that appends the
// probe's score to the concepts.

#include <span>
#include <vector>

#include "mirage/detector.hpp"
#include "mirage/linear.hpp"
#include "mirage/types.hpp"

namespace mirage {

struct MirageTxtModel {
  CalibratedClassifier text_linear;
  CalibratedClassifier tbm_bottleneck;

  friend bool operator==(const MirageTxtModel&, const MirageTxtModel&) = default;
};

inline CalibratedClassifier train_text_linear(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                              const DetectorConfig& config, TrainLog* log = nullptr) {
  if (train.empty()) throw DataError("text linear probe: empty training set");
  const std::size_t dim = text_dim_of(train);
  auto row = [](const FeatureRecord& r) -> const Vector& { return r.text_embedding; };
  return train_calibrated(feature_matrix(train, dim, row), labels_of(train), feature_matrix(eval, dim, row),
                          labels_of(eval), config.train, log);
}

inline CalibratedClassifier train_tbm(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                      const DetectorConfig& config, TrainLog* log = nullptr) {
  if (train.empty()) throw DataError("TBM: empty training set");
  const std::size_t width = concept_count_of(train);
  auto row = [](const FeatureRecord& r) -> const Vector& { return r.text_concepts; };
  return train_calibrated(feature_matrix(train, width, row), labels_of(train), feature_matrix(eval, width, row),
                          labels_of(eval), config.train, log);
}

/// [concepts || text-linear score]; the score occupies index n_text_concepts.
inline Vector stacked_text_features(const FeatureRecord& record, const CalibratedClassifier& text_linear) {
  Vector v = record.text_concepts;
  v.push_back(text_linear.score(record.text_embedding));
  return v;
}

inline MirageTxtModel assemble_mirage_txt(CalibratedClassifier text_linear, std::span<const FeatureRecord> train,
                                          std::span<const FeatureRecord> eval, const DetectorConfig& config,
                                          TrainLog* log = nullptr) {
  if (train.empty()) throw DataError("MiRAGe-Txt: empty training set");
  const std::size_t width = concept_count_of(train) + 1;
  auto row = [&](const FeatureRecord& r) { return stacked_text_features(r, text_linear); };
  CalibratedClassifier head = train_calibrated(feature_matrix(train, width, row), labels_of(train),
                                               feature_matrix(eval, width, row), labels_of(eval), config.train, log);
  return {std::move(text_linear), std::move(head)};
}

inline MirageTxtModel train_mirage_txt(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                                       const DetectorConfig& config) {
  return assemble_mirage_txt(train_text_linear(train, eval, config), train, eval, config);
}

inline double score_txt(const MirageTxtModel& model, const FeatureRecord& record) {
  if (record.text_concepts.size() + 1 != model.tbm_bottleneck.model.input_dim()) {
    throw DataError("record '" + record.id + "': has " + std::to_string(record.text_concepts.size()) +
                    " text concepts, model expects " + std::to_string(model.tbm_bottleneck.model.input_dim() - 1));
  }
  return model.tbm_bottleneck.score(stacked_text_features(record, model.text_linear));
}

inline Prediction predict_txt(const MirageTxtModel& model, const FeatureRecord& record) {
  return thresholded(score_txt(model, record), model.tbm_bottleneck.threshold);
}

}  // namespace mirage
