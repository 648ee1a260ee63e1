#pragma once

// Split-matrix evaluation: one metric row per test source plus the OOD-AVG
// row, rendered as text tables or JSON.

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/bundle.hpp"
#include "mirage/detector.hpp"
#include "mirage/metrics.hpp"

namespace mirage {

struct MetricRow {
  std::string split;
  std::size_t n = 0;
  // Blank rows (SDXL columns for caption-only models) carry no metrics.
  bool blank = false;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> average_precision;
  std::optional<double> real_accuracy;
  std::optional<double> fake_accuracy;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct EvalReport {
  std::string model_id;
  std::string mode;
  std::uint64_t seed = 0;
  std::string timestamp;
  std::vector<MetricRow> rows;
  std::optional<MetricRow> ood_avg;
  std::vector<std::string> warnings;

  const MetricRow* row(std::string_view split) const {
    for (const auto& r : rows) {
      if (r.split == split) return &r;
    }
    return nullptr;
  }

  // Equality ignores the timestamp.
  friend bool operator==(const EvalReport& a, const EvalReport& b) {
    return a.model_id == b.model_id && a.mode == b.mode && a.seed == b.seed && a.rows == b.rows &&
           a.ood_avg == b.ood_avg && a.warnings == b.warnings;
  }
};

struct EvalOptions {
  // Leave shared-caption SDXL rows blank for caption-only detectors.
  bool blank_shared_text = true;
  std::string mode;
  std::uint64_t seed = 0;
  std::string timestamp;
};

inline MetricRow metric_row(std::string split, std::span<const int> y_true, std::span<const int> y_pred,
                            std::span<const double> scores) {
  MetricRow row;
  row.split = std::move(split);
  row.n = y_true.size();
  row.accuracy = accuracy(y_true, y_pred);
  row.f1 = f1(y_true, y_pred);
  if (std::find(y_true.begin(), y_true.end(), 1) != y_true.end()) row.average_precision = average_precision(y_true, scores);
  const auto cw = classwise_accuracy(y_true, y_pred);
  row.real_accuracy = cw.real;
  row.fake_accuracy = cw.fake;
  return row;
}

namespace detail {

inline std::optional<double> mean_of(std::span<const MetricRow* const> rows, std::optional<double> MetricRow::*field) {
  double sum = 0.0;
  std::size_t k = 0;
  for (const MetricRow* r : rows) {
    if (r->*field) {
      sum += *(r->*field);
      ++k;
    }
  }
  if (k == 0) return std::nullopt;
  return sum / static_cast<double>(k);
}

}  // namespace detail

/// Unweighted mean of the non-blank out-of-domain rows.
inline std::optional<MetricRow> ood_average(std::span<const MetricRow> rows) {
  std::vector<const MetricRow*> ood;
  for (const auto& r : rows) {
    if (!r.blank && !source::is_in_domain(r.split)) ood.push_back(&r);
  }
  if (ood.empty()) return std::nullopt;
  MetricRow avg;
  avg.split = "ood_avg";
  for (const MetricRow* r : ood) {
    avg.n += r->n;
    avg.accuracy += r->accuracy;
    avg.f1 += r->f1;
  }
  avg.accuracy /= static_cast<double>(ood.size());
  avg.f1 /= static_cast<double>(ood.size());
  avg.average_precision = detail::mean_of(ood, &MetricRow::average_precision);
  avg.real_accuracy = detail::mean_of(ood, &MetricRow::real_accuracy);
  avg.fake_accuracy = detail::mean_of(ood, &MetricRow::fake_accuracy);
  return avg;
}

inline EvalReport evaluate(const Detector& detector, std::span<const SourceGroup> groups, const EvalOptions& options = {}) {
  EvalReport report;
  report.model_id = detector.name();
  report.mode = options.mode;
  report.seed = options.seed;
  report.timestamp = options.timestamp;
  for (const auto& g : groups) {
    if (g.records.empty()) {
      report.warnings.push_back("split '" + g.source + "' is empty; skipped");
      continue;
    }
    if (options.blank_shared_text && detector.modality() == Modality::kText && source::shares_dalle_text(g.source)) {
      MetricRow blank;
      blank.split = g.source;
      blank.n = g.records.size();
      blank.blank = true;
      report.rows.push_back(std::move(blank));
      continue;
    }
    std::vector<int> y_true, y_pred;
    std::vector<double> scores;
    for (const auto& r : g.records) {
      const Prediction p = detector.predict(r);
      y_true.push_back(r.label.value());
      y_pred.push_back(p.label);
      scores.push_back(p.score);
    }
    report.rows.push_back(metric_row(g.source, y_true, y_pred, scores));
  }
  report.ood_avg = ood_average(report.rows);
  return report;
}

// JSON form of a report; metrics are plain fractions in [0,1], absent values are null.

inline nlohmann::json to_json(const MetricRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"split", r.split}, {"n", r.n}, {"blank", r.blank}};
  if (r.blank) return j;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["average_precision"] = opt(r.average_precision);
  j["real_accuracy"] = opt(r.real_accuracy);
  j["fake_accuracy"] = opt(r.fake_accuracy);
  return j;
}

inline MetricRow metric_row_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  MetricRow r;
  r.split = j.at("split").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.blank = j.value("blank", false);
  if (r.blank) return r;
  r.accuracy = j.at("accuracy").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.average_precision = opt("average_precision");
  r.real_accuracy = opt("real_accuracy");
  r.fake_accuracy = opt("fake_accuracy");
  return r;
}

inline nlohmann::json to_json(const EvalReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) rows.push_back(to_json(r));
  return {{"metadata", {{"model_id", rep.model_id}, {"mode", rep.mode}, {"seed", rep.seed}, {"timestamp", rep.timestamp}}},
          {"rows", std::move(rows)},
          {"ood_avg", rep.ood_avg ? to_json(*rep.ood_avg) : nlohmann::json(nullptr)},
          {"warnings", rep.warnings}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport rep;
  const auto& meta = j.at("metadata");
  rep.model_id = meta.at("model_id").get<std::string>();
  rep.mode = meta.at("mode").get<std::string>();
  rep.seed = meta.at("seed").get<std::uint64_t>();
  rep.timestamp = meta.at("timestamp").get<std::string>();
  for (const auto& r : j.at("rows")) rep.rows.push_back(metric_row_from_json(r));
  if (!j.at("ood_avg").is_null()) rep.ood_avg = metric_row_from_json(j.at("ood_avg"));
  rep.warnings = j.at("warnings").get<std::vector<std::string>>();
  return rep;
}

namespace detail {

inline std::string pct(std::optional<double> v, int width = 6) {
  char buf[32];
  if (!v) {
    std::snprintf(buf, sizeof buf, "%*s", width, "-");
  } else {
    std::snprintf(buf, sizeof buf, "%*.1f", width, 100.0 * *v);
  }
  return buf;
}

inline std::string cell(const std::string& s, int width) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s", width, s.c_str());
  return buf;
}

inline std::string display_split(const std::string& s) {
  if (s == source::kNytMj) return "NYT+MJ (ID)";
  if (s == source::kBbcDalle) return "BBC+DALL-E";
  if (s == source::kCnnDalle) return "CNN+DALL-E";
  if (s == source::kBbcSdxl) return "BBC+SDXL";
  if (s == source::kCnnSdxl) return "CNN+SDXL";
  if (s == "ood_avg") return "OOD-AVG";
  return s;
}

}  // namespace detail

/// One report as a table with a row per split; values in percent.
inline std::string render_table(const EvalReport& rep) {
  std::ostringstream out;
  out << "model: " << rep.model_id;
  if (!rep.mode.empty()) out << "  mode: " << rep.mode;
  out << "  seed: " << rep.seed << "\n";
  out << detail::cell("split", 14) << "     n     Acc     F1     AP   Real   Fake\n";
  auto line = [&](const MetricRow& r) {
    char n[16];
    std::snprintf(n, sizeof n, "%6zu", r.n);
    out << detail::cell(detail::display_split(r.split), 14) << n;
    if (r.blank) {
      out << "  " << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt)
          << " " << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt) << "\n";
      return;
    }
    out << "  " << detail::pct(r.accuracy) << " " << detail::pct(r.f1) << " " << detail::pct(r.average_precision)
        << " " << detail::pct(r.real_accuracy) << " " << detail::pct(r.fake_accuracy) << "\n";
  };
  for (const auto& r : rep.rows) line(r);
  if (rep.ood_avg) line(*rep.ood_avg);
  for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
  return out.str();
}

struct NamedReport {
  std::string name;
  EvalReport report;
};

/// Several reports side by side: one line per model, Acc/F1/AP per split
/// column group, OOD-AVG last.
inline std::string render_summary(std::span<const NamedReport> reports) {
  std::vector<std::string> splits;
  for (const auto& nr : reports) {
    for (const auto& r : nr.report.rows) {
      if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
    }
  }
  splits.push_back("ood_avg");
  std::ostringstream out;
  out << detail::cell("", 22);
  for (const auto& s : splits) out << "| " << detail::cell(detail::display_split(s), 21);
  out << "\n" << detail::cell("model", 22);
  for (std::size_t i = 0; i < splits.size(); ++i) out << "|    Acc     F1     AP ";
  out << "\n";
  for (const auto& nr : reports) {
    out << detail::cell(nr.name, 22);
    for (const auto& s : splits) {
      const MetricRow* r = s == "ood_avg" ? (nr.report.ood_avg ? &*nr.report.ood_avg : nullptr) : nr.report.row(s);
      out << "| ";
      if (r == nullptr || r->blank) {
        out << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt) << " ";
      } else {
        out << detail::pct(r->accuracy) << " " << detail::pct(r->f1) << " " << detail::pct(r->average_precision) << " ";
      }
    }
    out << "\n";
  }
  return out.str();
}

/// Class-wise companion to render_summary: Real/Fake accuracy per split.
inline std::string render_classwise_summary(std::span<const NamedReport> reports) {
  std::vector<std::string> splits;
  for (const auto& nr : reports) {
    for (const auto& r : nr.report.rows) {
      if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
    }
  }
  splits.push_back("ood_avg");
  std::ostringstream out;
  out << detail::cell("", 22);
  for (const auto& s : splits) out << "| " << detail::cell(detail::display_split(s), 14);
  out << "\n" << detail::cell("model", 22);
  for (std::size_t i = 0; i < splits.size(); ++i) out << "|   Real   Fake ";
  out << "\n";
  for (const auto& nr : reports) {
    out << detail::cell(nr.name, 22);
    for (const auto& s : splits) {
      const MetricRow* r = s == "ood_avg" ? (nr.report.ood_avg ? &*nr.report.ood_avg : nullptr) : nr.report.row(s);
      out << "| ";
      if (r == nullptr || r->blank) {
        out << detail::pct(std::nullopt) << " " << detail::pct(std::nullopt) << " ";
      } else {
        out << detail::pct(r->real_accuracy) << " " << detail::pct(r->fake_accuracy) << " ";
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace mirage
