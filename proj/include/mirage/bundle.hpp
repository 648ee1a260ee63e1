#pragma once

// Feature bundle I/O.
//
// A bundle is a line-delimited JSON file. Line 1 is the header
//   {"format":"mirage-bundle","version":1,"manifest":{...}}
// and every following non-empty line is one FeatureRecord. See docs/bundle-format.md.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mirage/types.hpp"

namespace mirage {

using json = nlohmann::json;

inline constexpr std::string_view kBundleFormat = "mirage-bundle";
inline constexpr int kBundleVersion = 1;

namespace detail {

inline void require_dim(std::string_view id, std::string_view what, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DataError("record '" + std::string(id) + "': " + std::string(what) + " has length " +
                    std::to_string(got) + ", manifest expects " + std::to_string(want));
  }
}

inline void require_finite(std::string_view id, std::string_view what, std::span<const double> v) {
  if (!all_finite(v)) {
    throw DataError("record '" + std::string(id) + "': non-finite value in " + std::string(what));
  }
}

// nlohmann writes NaN/Inf as null; reject that (and any non-number) explicitly.
inline Vector read_reals(const json& j, std::string_view id, std::string_view what) {
  if (!j.is_array()) throw DataError("record '" + std::string(id) + "': " + std::string(what) + " must be an array");
  Vector out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw DataError("record '" + std::string(id) + "': non-finite value in " + std::string(what));
    }
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace detail

inline void validate_manifest(const DatasetManifest& m) {
  if (m.image_dim == 0 || m.text_dim == 0 || m.crop_dim == 0) {
    throw DataError("manifest: image_dim, text_dim and crop_dim must be positive");
  }
  if (m.n_object_classes == 0 || m.n_text_concepts == 0) {
    throw DataError("manifest: n_object_classes and n_text_concepts must be positive");
  }
  if (m.object_class_names.size() != m.n_object_classes) {
    throw DataError("manifest: object_class_names has " + std::to_string(m.object_class_names.size()) +
                    " entries, n_object_classes is " + std::to_string(m.n_object_classes));
  }
  if (!m.text_concept_names.empty() && m.text_concept_names.size() != m.n_text_concepts) {
    throw DataError("manifest: text_concept_names length does not match n_text_concepts");
  }
}

inline void validate_record(const DatasetManifest& m, const FeatureRecord& r) {
  if (r.id.empty()) throw DataError("record with empty id");
  detail::require_dim(r.id, "image_embedding", r.image_embedding.size(), m.image_dim);
  detail::require_dim(r.id, "text_embedding", r.text_embedding.size(), m.text_dim);
  detail::require_dim(r.id, "text_concepts", r.text_concepts.size(), m.n_text_concepts);
  detail::require_finite(r.id, "image_embedding", r.image_embedding);
  detail::require_finite(r.id, "text_embedding", r.text_embedding);
  detail::require_finite(r.id, "text_concepts", r.text_concepts);
  for (double c : r.text_concepts) {
    if (c < 0.0 || c > 1.0) throw DataError("record '" + r.id + "': text concept score outside [0,1]");
  }
  for (const auto& d : r.objects) {
    if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= m.n_object_classes) {
      throw DataError("record '" + r.id + "': object class_id " + std::to_string(d.class_id) +
                      " outside vocabulary of " + std::to_string(m.n_object_classes));
    }
    if (d.class_name != m.object_class_names[static_cast<std::size_t>(d.class_id)]) {
      throw DataError("record '" + r.id + "': object class_name '" + d.class_name + "' does not match vocabulary entry " +
                      std::to_string(d.class_id));
    }
    detail::require_dim(r.id, "crop_embedding", d.crop_embedding.size(), m.crop_dim);
    detail::require_finite(r.id, "crop_embedding", d.crop_embedding);
    if (!(d.detector_confidence >= 0.0 && d.detector_confidence <= 1.0)) {
      throw DataError("record '" + r.id + "': detector_confidence outside [0,1]");
    }
  }
}

// Full bundle check: manifest, every record, unique ids, split references.
inline void validate_bundle(const DatasetManifest& m, std::span<const FeatureRecord> records) {
  validate_manifest(m);
  std::unordered_set<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) {
    validate_record(m, r);
    if (!ids.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
  }
  for (const auto& [id, part] : m.split_assignments) {
    if (!ids.contains(id)) throw DataError("split assignment references unknown record id '" + id + "'");
  }
}

inline json manifest_to_json(const DatasetManifest& m) {
  json splits = json::object();
  for (const auto& [id, part] : m.split_assignments) splits[id] = to_string(part);
  json j = {
      {"image_dim", m.image_dim},
      {"text_dim", m.text_dim},
      {"crop_dim", m.crop_dim},
      {"n_object_classes", m.n_object_classes},
      {"n_text_concepts", m.n_text_concepts},
      {"object_class_names", m.object_class_names},
      {"split_assignments", std::move(splits)},
  };
  if (!m.text_concept_names.empty()) j["text_concept_names"] = m.text_concept_names;
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.image_dim = j.at("image_dim").get<std::size_t>();
  m.text_dim = j.at("text_dim").get<std::size_t>();
  m.crop_dim = j.at("crop_dim").get<std::size_t>();
  m.n_object_classes = j.value("n_object_classes", std::size_t{300});
  m.n_text_concepts = j.value("n_text_concepts", std::size_t{18});
  m.object_class_names = j.at("object_class_names").get<std::vector<std::string>>();
  if (j.contains("text_concept_names")) {
    m.text_concept_names = j.at("text_concept_names").get<std::vector<std::string>>();
  }
  if (j.contains("split_assignments")) {
    for (const auto& [id, part] : j.at("split_assignments").items()) {
      m.split_assignments.emplace(id, parse_partition(part.get<std::string>()));
    }
  }
  return m;
}

inline json record_to_json(const FeatureRecord& r) {
  json objects = json::array();
  for (const auto& d : r.objects) {
    objects.push_back({{"class_id", d.class_id},
                       {"class_name", d.class_name},
                       {"confidence", d.detector_confidence},
                       {"crop_embedding", d.crop_embedding}});
  }
  return {{"id", r.id},
          {"label", r.label.value()},
          {"source", r.source},
          {"image_embedding", r.image_embedding},
          {"text_embedding", r.text_embedding},
          {"objects", std::move(objects)},
          {"text_concepts", r.text_concepts}};
}

inline FeatureRecord record_from_json(const json& j) {
  FeatureRecord r;
  r.id = j.at("id").get<std::string>();
  r.label = Label(j.at("label").get<int>());
  r.source = j.at("source").get<std::string>();
  r.image_embedding = detail::read_reals(j.at("image_embedding"), r.id, "image_embedding");
  r.text_embedding = detail::read_reals(j.at("text_embedding"), r.id, "text_embedding");
  r.text_concepts = detail::read_reals(j.at("text_concepts"), r.id, "text_concepts");
  for (const auto& o : j.at("objects")) {
    ObjectDetection d;
    d.class_id = o.at("class_id").get<int>();
    d.class_name = o.at("class_name").get<std::string>();
    d.detector_confidence = o.value("confidence", 1.0);
    d.crop_embedding = detail::read_reals(o.at("crop_embedding"), r.id, "crop_embedding");
    r.objects.push_back(std::move(d));
  }
  return r;
}

struct Bundle {
  DatasetManifest manifest;
  std::vector<FeatureRecord> records;
};

inline Bundle parse_bundle(std::istream& in) {
  Bundle b;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      json j = json::parse(line);
      if (!have_header) {
        if (j.value("format", std::string{}) != kBundleFormat) throw DataError("missing bundle header");
        if (j.value("version", 0) != kBundleVersion) throw DataError("unsupported bundle version");
        b.manifest = manifest_from_json(j.at("manifest"));
        validate_manifest(b.manifest);
        have_header = true;
        continue;
      }
      FeatureRecord r = record_from_json(j);
      validate_record(b.manifest, r);
      if (!ids.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
      b.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed line: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("bundle has no manifest header line");
  for (const auto& [id, part] : b.manifest.split_assignments) {
    if (!ids.contains(id)) throw DataError("split assignment references unknown record id '" + id + "'");
  }
  return b;
}

inline Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open bundle '" + path.string() + "'");
  try {
    return parse_bundle(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_bundle(std::ostream& out, const DatasetManifest& m, std::span<const FeatureRecord> records) {
  validate_bundle(m, records);
  json header = {{"format", kBundleFormat}, {"version", kBundleVersion}, {"manifest", manifest_to_json(m)}};
  out << header.dump() << '\n';
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

// Validates everything before the file is opened, so invalid input never touches disk.
inline void save_bundle(const DatasetManifest& m, std::span<const FeatureRecord> records,
                        const std::filesystem::path& path) {
  validate_bundle(m, records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write bundle '" + path.string() + "'");
  write_bundle(out, m, records);
  out.flush();
  if (!out) throw DataError("I/O error writing bundle '" + path.string() + "'");
}

struct Partitions {
  std::vector<FeatureRecord> train;
  std::vector<FeatureRecord> eval;
  std::vector<FeatureRecord> test;
};

inline Partitions split(std::span<const FeatureRecord> records, const DatasetManifest& m) {
  Partitions p;
  for (const auto& r : records) {
    auto it = m.split_assignments.find(r.id);
    if (it == m.split_assignments.end()) throw DataError("record '" + r.id + "' has no split assignment");
    switch (it->second) {
      case Partition::kTrain: p.train.push_back(r); break;
      case Partition::kEval: p.eval.push_back(r); break;
      case Partition::kTest: p.test.push_back(r); break;
    }
  }
  return p;
}

struct SourceGroup {
  std::string source;
  std::vector<FeatureRecord> records;
};

// Reserved sources first in the fixed column order, then user-defined sources
// in order of first appearance.
inline std::vector<SourceGroup> group_by_source(std::span<const FeatureRecord> records) {
  std::vector<SourceGroup> groups;
  for (auto tag : source::kReserved) groups.push_back({std::string(tag), {}});
  for (const auto& r : records) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const SourceGroup& g) { return g.source == r.source; });
    if (it == groups.end()) {
      groups.push_back({r.source, {r}});
    } else {
      it->records.push_back(r);
    }
  }
  std::erase_if(groups, [](const SourceGroup& g) { return g.records.empty(); });
  return groups;
}

}  // namespace mirage
