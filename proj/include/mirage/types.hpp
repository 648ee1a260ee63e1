#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mirage {

// Raised for malformed inputs: bad files, dimension mismatches, broken invariants.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when optimisation produces a non-finite loss or parameter.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary class of an image-caption pair: 0 = real, 1 = generated.
class Label {
 public:
  static constexpr int kReal = 0;
  static constexpr int kFake = 1;

  constexpr Label() = default;
  explicit Label(int value) : value_(value) {
    if (value != kReal && value != kFake) {
      throw DataError("label must be 0 or 1, got " + std::to_string(value));
    }
  }

  constexpr int value() const { return value_; }
  constexpr bool is_fake() const { return value_ == kFake; }
  friend constexpr bool operator==(Label, Label) = default;

 private:
  int value_ = kReal;
};

using Vector = std::vector<double>;

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

struct ObjectDetection {
  int class_id = 0;
  std::string class_name;
  Vector crop_embedding;
  double detector_confidence = 1.0;

  friend bool operator==(const ObjectDetection&, const ObjectDetection&) = default;
};

// Reserved source tags. Any other string is a user-defined OOD source.
namespace source {
inline constexpr std::string_view kNytMj = "nyt_mj";
inline constexpr std::string_view kBbcDalle = "bbc_dalle";
inline constexpr std::string_view kCnnDalle = "cnn_dalle";
inline constexpr std::string_view kBbcSdxl = "bbc_sdxl";
inline constexpr std::string_view kCnnSdxl = "cnn_sdxl";

inline constexpr std::string_view kReserved[] = {kNytMj, kBbcDalle, kCnnDalle, kBbcSdxl, kCnnSdxl};

inline bool is_in_domain(std::string_view tag) { return tag == kNytMj; }

// SDXL splits reuse the DALL-E captions, so text-only reports leave them blank.
inline bool shares_dalle_text(std::string_view tag) { return tag == kBbcSdxl || tag == kCnnSdxl; }
}  // namespace source

struct FeatureRecord {
  std::string id;
  Label label;
  std::string source{source::kNytMj};
  Vector image_embedding;
  Vector text_embedding;
  std::vector<ObjectDetection> objects;
  Vector text_concepts;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

enum class Partition { kTrain, kEval, kTest };

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::kTrain: return "train";
    case Partition::kEval: return "eval";
    case Partition::kTest: return "test";
  }
  return "?";
}

inline Partition parse_partition(std::string_view s) {
  if (s == "train") return Partition::kTrain;
  if (s == "eval") return Partition::kEval;
  if (s == "test") return Partition::kTest;
  throw DataError("unknown split '" + std::string(s) + "'");
}

struct DatasetManifest {
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;
  std::size_t crop_dim = 0;
  std::size_t n_object_classes = 300;
  std::size_t n_text_concepts = 18;
  std::vector<std::string> object_class_names;
  // Optional, for report readability only.
  std::vector<std::string> text_concept_names;
  std::map<std::string, Partition> split_assignments;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

}  // namespace mirage
