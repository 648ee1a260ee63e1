#pragma once

// Fixtures shared by the test suites.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mirage/bundle.hpp"
#include "mirage/random.hpp"
#include "mirage/synth.hpp"

namespace mirage::testing {

// Self-deleting scratch directory under the system temp dir.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mirage-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline Vector random_vector(Rng& rng, std::size_t n, double sd = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

// Small manifest: 3-dim image, 2-dim text, 2-dim crops, 5 classes, 4 concepts.
inline DatasetManifest tiny_manifest() {
  DatasetManifest m;
  m.image_dim = 3;
  m.text_dim = 2;
  m.crop_dim = 2;
  m.n_object_classes = 5;
  m.n_text_concepts = 4;
  m.object_class_names = {"person", "car", "flag", "dog", "tree"};
  return m;
}

inline FeatureRecord tiny_record(Rng& rng, const DatasetManifest& m, std::string id, int label,
                                 std::string source = std::string(source::kNytMj)) {
  FeatureRecord r;
  r.id = std::move(id);
  r.label = Label(label);
  r.source = std::move(source);
  r.image_embedding = random_vector(rng, m.image_dim);
  r.text_embedding = random_vector(rng, m.text_dim);
  const auto n_obj = rng.below(4);
  for (std::uint64_t k = 0; k < n_obj; ++k) {
    ObjectDetection d;
    d.class_id = static_cast<int>(rng.below(m.n_object_classes));
    d.class_name = m.object_class_names[static_cast<std::size_t>(d.class_id)];
    d.crop_embedding = random_vector(rng, m.crop_dim);
    d.detector_confidence = rng.uniform();
    r.objects.push_back(std::move(d));
  }
  r.text_concepts.resize(m.n_text_concepts);
  for (double& c : r.text_concepts) c = rng.uniform();
  return r;
}

// Quick synthetic bundle for tests that need trained models but not the
// full-size acceptance configuration.
inline SynthConfig small_synth(std::uint64_t seed = 11) {
  SynthConfig c;
  c.seed = seed;
  c.n_train = 200;
  c.n_eval = 200;
  c.n_test_per_split = 100;
  c.n_object_classes = 40;
  return c;
}

}  // namespace mirage::testing
