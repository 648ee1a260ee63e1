#pragma once

// Multimodal combination of the image and caption detectors.
//
//   late            sigmoid(mean of the two unimodal logits); no trained parameters
//   early-outputs   calibrated linear head over [s_img, s_txt]
//   early-features  calibrated linear head over [image_embedding || text_embedding]

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mirage/detector.hpp"
#include "mirage/image_cbm.hpp"
#include "mirage/linear.hpp"
#include "mirage/text_pipeline.hpp"

namespace mirage {

enum class FusionMode { kLate, kEarlyOutputs, kEarlyFeatures };

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kLate: return "late";
    case FusionMode::kEarlyOutputs: return "early-outputs";
    case FusionMode::kEarlyFeatures: return "early-features";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "late") return FusionMode::kLate;
  if (s == "early-outputs" || s == "early") return FusionMode::kEarlyOutputs;
  if (s == "early-features") return FusionMode::kEarlyFeatures;
  throw DataError("unknown fusion mode '" + std::string(s) + "'");
}

inline double fuse_late(double s_img, double s_txt) { return sigmoid(0.5 * (logit(s_img) + logit(s_txt))); }

inline Prediction predict_late(const MirageImgModel& img, const MirageTxtModel& txt, const FeatureRecord& record,
                               double late_threshold = 0.5) {
  return thresholded(fuse_late(score_img(img, record), score_txt(txt, record)), late_threshold);
}

/// Late fusion of two arbitrary detectors, e.g. the two linear probes.
inline Detector late_fused(std::string name, Detector img, Detector txt, double threshold = 0.5) {
  return Detector(std::move(name), Modality::kMultimodal,
                  [img = std::move(img), txt = std::move(txt)](const FeatureRecord& r) {
                    return fuse_late(img.score(r), txt.score(r));
                  },
                  threshold);
}

struct MirageModel {
  MirageImgModel img;
  MirageTxtModel txt;
  FusionMode mode = FusionMode::kLate;
  std::optional<CalibratedClassifier> fusion_head;
  double late_threshold = 0.5;

  void validate() const {
    const bool early = mode != FusionMode::kLate;
    if (early != fusion_head.has_value()) {
      throw DataError(early ? "early-fusion model has no fusion head" : "late-fusion model must not carry a fusion head");
    }
    if (mode == FusionMode::kEarlyOutputs && fusion_head->model.input_dim() != 2) {
      throw DataError("early-outputs fusion head must take 2 inputs");
    }
    if (mode == FusionMode::kEarlyFeatures &&
        fusion_head->model.input_dim() !=
            img.global_linear.model.input_dim() + txt.text_linear.model.input_dim()) {
      throw DataError("early-features fusion head must take image_dim + text_dim inputs");
    }
    if (!(late_threshold > 0.0 && late_threshold < 1.0)) throw DataError("late threshold outside (0,1)");
  }

  friend bool operator==(const MirageModel&, const MirageModel&) = default;
};

inline Vector unimodal_scores(const MirageImgModel& img, const MirageTxtModel& txt, const FeatureRecord& r) {
  return {score_img(img, r), score_txt(txt, r)};
}

inline Vector concatenated_embeddings(const FeatureRecord& r) {
  Vector v = r.image_embedding;
  v.insert(v.end(), r.text_embedding.begin(), r.text_embedding.end());
  return v;
}

inline MirageModel make_late(MirageImgModel img, MirageTxtModel txt, double late_threshold = 0.5) {
  MirageModel m{std::move(img), std::move(txt), FusionMode::kLate, std::nullopt, late_threshold};
  m.validate();
  return m;
}

/// Optional: replaces the fixed 0.5 late-fusion cutoff with the eval-accuracy optimum.
inline double calibrate_late_threshold(const MirageImgModel& img, const MirageTxtModel& txt,
                                       std::span<const FeatureRecord> eval) {
  std::vector<double> scores;
  for (const auto& r : eval) scores.push_back(fuse_late(score_img(img, r), score_txt(txt, r)));
  return choose_threshold(scores, labels_of(eval));
}

inline MirageModel train_early(std::span<const FeatureRecord> train, std::span<const FeatureRecord> eval,
                               MirageImgModel img, MirageTxtModel txt, FusionMode variant,
                               const DetectorConfig& config, TrainLog* log = nullptr) {
  if (variant == FusionMode::kLate) throw DataError("train_early needs an early fusion variant");
  if (train.empty()) throw DataError("early fusion: empty training set");
  CalibratedClassifier head;
  if (variant == FusionMode::kEarlyOutputs) {
    auto row = [&](const FeatureRecord& r) { return unimodal_scores(img, txt, r); };
    head = train_calibrated(feature_matrix(train, 2, row), labels_of(train), feature_matrix(eval, 2, row),
                            labels_of(eval), config.train, log);
  } else {
    const std::size_t width = image_dim_of(train) + text_dim_of(train);
    auto row = [](const FeatureRecord& r) { return concatenated_embeddings(r); };
    head = train_calibrated(feature_matrix(train, width, row), labels_of(train), feature_matrix(eval, width, row),
                            labels_of(eval), config.train, log);
  }
  MirageModel m{std::move(img), std::move(txt), variant, std::move(head), 0.5};
  m.validate();
  return m;
}

inline double score_mirage(const MirageModel& m, const FeatureRecord& r) {
  switch (m.mode) {
    case FusionMode::kLate: return fuse_late(score_img(m.img, r), score_txt(m.txt, r));
    case FusionMode::kEarlyOutputs:
      if (!m.fusion_head) throw DataError("early-outputs model has no fusion head");
      return m.fusion_head->score(unimodal_scores(m.img, m.txt, r));
    case FusionMode::kEarlyFeatures:
      if (!m.fusion_head) throw DataError("early-features model has no fusion head");
      return m.fusion_head->score(concatenated_embeddings(r));
  }
  throw DataError("unknown fusion mode");
}

inline double decision_threshold(const MirageModel& m) {
  return m.mode == FusionMode::kLate ? m.late_threshold : m.fusion_head.value().threshold;
}

inline Prediction predict(const MirageModel& m, const FeatureRecord& r) {
  return thresholded(score_mirage(m, r), decision_threshold(m));
}

}  // namespace mirage
