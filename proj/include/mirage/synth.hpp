#pragma once

// Deterministic synthetic feature bundles.
//
// Embeddings are isotropic Gaussians with unit total variance (per-coordinate
// variance 1/dim). Real and generated class means sit at -signal/2 and
// +signal/2 along a fixed random axis, so `signal` is the distance between the
// class means. Object crops follow the same scheme per object class around a
// class-specific centre; caption concepts are squashed Gaussians whose means
// shift with the label in proportion to text_signal. The four OOD test sources
// add a mean shift of length ood_shift orthogonal to each signal axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mirage/bundle.hpp"
#include "mirage/linear.hpp"
#include "mirage/random.hpp"
#include "mirage/types.hpp"

namespace mirage {

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_train = 400;
  std::size_t n_eval = 400;
  std::size_t n_test_per_split = 400;
  std::size_t image_dim = 64;
  std::size_t text_dim = 32;
  std::size_t crop_dim = 32;
  double image_signal = 0.8;
  double text_signal = 0.8;
  double object_signal = 0.8;
  double mean_objects_per_record = 4.0;
  std::size_t n_object_classes = 300;
  std::size_t n_text_concepts = 18;
  double ood_shift = 0.5;

  void validate() const {
    for (std::size_t n : {n_train, n_eval, n_test_per_split}) {
      if (n == 0 || n % 2 != 0) throw DataError("synthetic partition sizes must be positive and even");
    }
    if (image_dim == 0 || text_dim == 0 || crop_dim == 0) throw DataError("synthetic dims must be positive");
    if (n_object_classes == 0 || n_text_concepts == 0) throw DataError("class and concept counts must be positive");
    for (double s : {image_signal, text_signal, object_signal}) {
      if (!(s >= 0.0 && s <= 1.0)) throw DataError("signals must lie in [0,1]");
    }
    if (!(mean_objects_per_record >= 0.0)) throw DataError("mean_objects_per_record must be non-negative");
    if (!(ood_shift >= 0.0)) throw DataError("ood_shift must be non-negative");
  }
};

namespace detail {

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Vector random_unit(Rng& rng, std::size_t dim) {
  Vector v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n = norm(v);
  } while (n < 1e-9);
  for (double& x : v) x /= n;
  return v;
}

// Unit vector orthogonal to `axis` (a unit vector); zero when dim < 2.
inline Vector orthogonal_unit(Vector v, std::span<const double> axis) {
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * axis[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * axis[i];
  const double n = norm(v);
  if (n < 1e-9) return Vector(v.size(), 0.0);
  for (double& x : v) x /= n;
  return v;
}

struct SynthWorld {
  Vector image_axis, text_axis;
  std::vector<Vector> class_centres, class_axes;
  std::vector<double> class_cdf;
  Vector concept_base, concept_strength;
  // Index 0 is the in-domain source (no shift), 1..4 the OOD sources.
  std::array<Vector, 5> image_shift, text_shift, crop_shift_raw, concept_shift;
};

inline SynthWorld make_world(const SynthConfig& c, Rng& rng) {
  SynthWorld w;
  w.image_axis = random_unit(rng, c.image_dim);
  w.text_axis = random_unit(rng, c.text_dim);
  const double centre_sd = 2.0 / std::sqrt(static_cast<double>(c.crop_dim));
  double total = 0.0;
  for (std::size_t k = 0; k < c.n_object_classes; ++k) {
    Vector centre(c.crop_dim);
    for (double& x : centre) x = rng.normal(0.0, centre_sd);
    w.class_centres.push_back(std::move(centre));
    w.class_axes.push_back(random_unit(rng, c.crop_dim));
    // Zipf(1) class frequencies: a few common classes, a long sparse tail.
    total += 1.0 / static_cast<double>(k + 1);
    w.class_cdf.push_back(total);
  }
  for (double& p : w.class_cdf) p /= total;
  for (std::size_t j = 0; j < c.n_text_concepts; ++j) {
    w.concept_base.push_back(rng.uniform(-1.0, 1.0));
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    w.concept_strength.push_back(sign * rng.uniform(0.5, 1.5));
  }
  const double strength_norm = norm(w.concept_strength);
  Vector strength_unit = w.concept_strength;
  for (double& x : strength_unit) x /= strength_norm;
  for (std::size_t s = 0; s < 5; ++s) {
    if (s == 0) {
      w.image_shift[s] = Vector(c.image_dim, 0.0);
      w.text_shift[s] = Vector(c.text_dim, 0.0);
      w.crop_shift_raw[s] = Vector(c.crop_dim, 0.0);
      w.concept_shift[s] = Vector(c.n_text_concepts, 0.0);
      continue;
    }
    w.image_shift[s] = orthogonal_unit(random_unit(rng, c.image_dim), w.image_axis);
    w.text_shift[s] = orthogonal_unit(random_unit(rng, c.text_dim), w.text_axis);
    w.crop_shift_raw[s] = random_unit(rng, c.crop_dim);
    w.concept_shift[s] = orthogonal_unit(random_unit(rng, c.n_text_concepts), strength_unit);
    for (double& x : w.image_shift[s]) x *= c.ood_shift;
    for (double& x : w.text_shift[s]) x *= c.ood_shift;
    for (double& x : w.concept_shift[s]) x *= c.ood_shift;
  }
  return w;
}

inline std::size_t sample_class(Rng& rng, std::span<const double> cdf) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

inline Vector embedding(Rng& rng, std::span<const double> axis, double signal, double sign,
                        std::span<const double> shift) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(axis.size()));
  Vector v(axis.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal(0.0, sd) + sign * 0.5 * signal * axis[i] + shift[i];
  return v;
}

}  // namespace detail

inline std::vector<std::string> synthetic_class_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "object_%03zu", k);
    names.emplace_back(buf);
  }
  return names;
}

inline Bundle generate(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const detail::SynthWorld world = detail::make_world(config, rng);

  Bundle bundle;
  DatasetManifest& m = bundle.manifest;
  m.image_dim = config.image_dim;
  m.text_dim = config.text_dim;
  m.crop_dim = config.crop_dim;
  m.n_object_classes = config.n_object_classes;
  m.n_text_concepts = config.n_text_concepts;
  m.object_class_names = synthetic_class_names(config.n_object_classes);
  for (std::size_t j = 0; j < config.n_text_concepts; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "concept_%02zu", j);
    m.text_concept_names.emplace_back(buf);
  }

  const double crop_sd = 1.0 / std::sqrt(static_cast<double>(config.crop_dim));
  auto emit = [&](Partition part, std::size_t source_index, std::size_t count) {
    const std::string tag(source::kReserved[source_index]);
    for (std::size_t i = 0; i < count; ++i) {
      FeatureRecord r;
      char id[96];
      std::snprintf(id, sizeof id, "%s-%s-%05zu", std::string(to_string(part)).c_str(), tag.c_str(), i);
      r.id = id;
      r.label = Label(static_cast<int>(i % 2));
      r.source = tag;
      const double sign = r.label.is_fake() ? 1.0 : -1.0;
      r.image_embedding =
          detail::embedding(rng, world.image_axis, config.image_signal, sign, world.image_shift[source_index]);
      r.text_embedding =
          detail::embedding(rng, world.text_axis, config.text_signal, sign, world.text_shift[source_index]);

      const int n_objects = rng.poisson(config.mean_objects_per_record);
      for (int k = 0; k < n_objects; ++k) {
        const std::size_t c = detail::sample_class(rng, world.class_cdf);
        const Vector& axis = world.class_axes[c];
        const Vector shift = [&] {
          Vector s = detail::orthogonal_unit(world.crop_shift_raw[source_index], axis);
          for (double& x : s) x *= source_index == 0 ? 0.0 : config.ood_shift;
          return s;
        }();
        ObjectDetection d;
        d.class_id = static_cast<int>(c);
        d.class_name = m.object_class_names[c];
        d.crop_embedding.resize(config.crop_dim);
        for (std::size_t q = 0; q < config.crop_dim; ++q) {
          d.crop_embedding[q] = world.class_centres[c][q] + rng.normal(0.0, crop_sd) +
                                (r.label.is_fake() ? config.object_signal * axis[q] : 0.0) + shift[q];
        }
        d.detector_confidence = rng.uniform(0.2, 1.0);
        r.objects.push_back(std::move(d));
      }

      r.text_concepts.resize(config.n_text_concepts);
      for (std::size_t j = 0; j < config.n_text_concepts; ++j) {
        const double z = world.concept_base[j] + sign * 0.5 * config.text_signal * world.concept_strength[j] +
                         world.concept_shift[source_index][j] + rng.normal();
        r.text_concepts[j] = sigmoid(z);
      }
      m.split_assignments.emplace(r.id, part);
      bundle.records.push_back(std::move(r));
    }
  };

  emit(Partition::kTrain, 0, config.n_train);
  emit(Partition::kEval, 0, config.n_eval);
  for (std::size_t s = 0; s < 5; ++s) emit(Partition::kTest, s, config.n_test_per_split);
  return bundle;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"n_train", c.n_train},
          {"n_eval", c.n_eval},
          {"n_test_per_split", c.n_test_per_split},
          {"image_dim", c.image_dim},
          {"text_dim", c.text_dim},
          {"crop_dim", c.crop_dim},
          {"image_signal", c.image_signal},
          {"text_signal", c.text_signal},
          {"object_signal", c.object_signal},
          {"mean_objects_per_record", c.mean_objects_per_record},
          {"n_object_classes", c.n_object_classes},
          {"n_text_concepts", c.n_text_concepts},
          {"ood_shift", c.ood_shift}};
}

}  // namespace mirage
