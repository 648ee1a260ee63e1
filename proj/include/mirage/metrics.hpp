#pragma once

// Binary classification metrics. The positive class is "generated" (label 1)
// throughout: F1 and average precision are computed for label 1.

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mirage/types.hpp"

namespace mirage {

namespace detail {

inline void check_pair(std::size_t a, std::size_t b) {
  if (a == 0) throw DataError("metric on empty input");
  if (a != b) throw DataError("metric inputs differ in length");
}

}  // namespace detail

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

inline Confusion confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  detail::check_pair(y_true.size(), y_pred.size());
  Confusion c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] == 1, p = y_pred[i] == 1;
    if (t && p) ++c.tp;
    else if (!t && p) ++c.fp;
    else if (!t && !p) ++c.tn;
    else ++c.fn;
  }
  return c;
}

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  const Confusion c = confusion(y_true, y_pred);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// 0 when precision + recall == 0 (no true positives).
inline double f1(std::span<const int> y_true, std::span<const int> y_pred) {
  const Confusion c = confusion(y_true, y_pred);
  if (c.tp == 0) return 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

/// Un-interpolated AP: mean over positives of precision at that positive's rank,
/// ranking by descending score. Equal scores keep their input order.
inline double average_precision(std::span<const int> y_true, std::span<const double> scores) {
  detail::check_pair(y_true.size(), scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (y_true[order[rank]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw DataError("average precision needs at least one positive");
  return sum / static_cast<double>(hits);
}

/// Per-class recall; a class absent from y_true is reported as nullopt.
struct ClasswiseAccuracy {
  std::optional<double> real;
  std::optional<double> fake;
};

inline ClasswiseAccuracy classwise_accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  const Confusion c = confusion(y_true, y_pred);
  ClasswiseAccuracy out;
  if (c.tn + c.fp > 0) out.real = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (c.tp + c.fn > 0) out.fake = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return out;
}

}  // namespace mirage
