#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mirage/linear.hpp"
#include "mirage/types.hpp"

namespace mirage {

struct Prediction {
  double score = 0.5;
  int label = Label::kReal;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

inline Prediction thresholded(double score, double threshold) {
  return {score, score >= threshold ? Label::kFake : Label::kReal};
}

/// Options shared by all trainable heads.
struct DetectorConfig {
  TrainConfig train;
  // Object-class bank.
  std::size_t min_crops_per_class = 10;
  double min_confidence = 0.0;
  unsigned threads = 1;
};

enum class Modality { kImage, kText, kMultimodal };

/// Type-erased view of a trained detector: a score in (0,1) for a record and
/// the threshold that turns it into a label.
class Detector {
 public:
  using ScoreFn = std::function<double(const FeatureRecord&)>;

  Detector(std::string name, Modality modality, ScoreFn score, double threshold)
      : name_(std::move(name)), modality_(modality), score_(std::move(score)), threshold_(threshold) {}

  const std::string& name() const { return name_; }
  Modality modality() const { return modality_; }
  double threshold() const { return threshold_; }

  double score(const FeatureRecord& r) const { return score_(r); }
  Prediction predict(const FeatureRecord& r) const { return thresholded(score(r), threshold_); }

 private:
  std::string name_;
  Modality modality_;
  ScoreFn score_;
  double threshold_;
};

template <typename RowFn>
FeatureMatrix feature_matrix(std::span<const FeatureRecord> records, std::size_t cols, RowFn&& row_of) {
  FeatureMatrix m(records.size(), cols);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = row_of(records[i]);
    if (row.size() != cols) {
      throw DataError("record '" + records[i].id + "': feature length " + std::to_string(row.size()) +
                      ", expected " + std::to_string(cols));
    }
    std::copy(row.begin(), row.end(), m.row(i).begin());
  }
  return m;
}

inline std::size_t image_dim_of(std::span<const FeatureRecord> records) {
  return records.empty() ? 0 : records.front().image_embedding.size();
}

inline std::size_t text_dim_of(std::span<const FeatureRecord> records) {
  return records.empty() ? 0 : records.front().text_embedding.size();
}

inline std::size_t concept_count_of(std::span<const FeatureRecord> records) {
  return records.empty() ? 0 : records.front().text_concepts.size();
}

}  // namespace mirage
