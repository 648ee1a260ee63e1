#pragma once

// Logistic-regression learner shared by every detector head: stable sigmoid,
// mean binary cross-entropy, analytic gradient, plateau-stopped gradient
// descent and accuracy-maximising threshold calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/random.hpp"
#include "mirage/types.hpp"

namespace mirage {

inline constexpr double kProbabilityEpsilon = 1e-12;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

inline double logit(double p) {
  const double q = clamp_probability(p);
  return std::log(q / (1.0 - q));
}

/// Dense row-major feature table.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static FeatureMatrix from_rows(std::span<const Vector> rows, std::size_t cols) {
    FeatureMatrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != cols) {
        throw DataError("feature row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                        " columns, expected " + std::to_string(cols));
      }
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Per-feature z-scoring with train-set statistics.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const FeatureMatrix& x) {
    Standardizer s{Vector(x.cols(), 0.0), Vector(x.cols(), 1.0)};
    if (x.empty()) return s;
    const double n = static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) s.mean[j] += x.row(i)[j];
    }
    for (double& m : s.mean) m /= n;
    Vector var(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double d = x.row(i)[j] - s.mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt(var[j] / n);
      // Constant columns pass through centred but unscaled.
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    if (!all_finite(s.mean) || !all_finite(s.scale)) {
      throw NumericError("feature statistics overflow; inputs are too large to standardise");
    }
    return s;
  }

  double apply(std::size_t j, double value) const { return (value - mean[j]) / scale[j]; }

  FeatureMatrix transform(const FeatureMatrix& x) const {
    FeatureMatrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) out.row(i)[j] = apply(j, x.row(i)[j]);
    }
    return out;
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct LinearModel {
  Vector weights;
  double bias = 0.0;
  std::optional<Standardizer> standardizer;

  LinearModel() = default;
  explicit LinearModel(std::size_t input_dim) : weights(input_dim, 0.0) {}
  LinearModel(Vector w, double b) : weights(std::move(w)), bias(b) {}

  std::size_t input_dim() const { return weights.size(); }

  double decision(std::span<const double> x) const {
    if (x.size() != weights.size()) {
      throw DataError("linear model expects " + std::to_string(weights.size()) + " features, got " +
                      std::to_string(x.size()));
    }
    double z = bias;
    if (standardizer) {
      for (std::size_t j = 0; j < x.size(); ++j) z += weights[j] * standardizer->apply(j, x[j]);
    } else {
      for (std::size_t j = 0; j < x.size(); ++j) z += weights[j] * x[j];
    }
    return z;
  }

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

inline double predict_score(const LinearModel& model, std::span<const double> x) {
  return sigmoid(model.decision(x));
}

namespace detail {

inline void check_training_shapes(const LinearModel& model, const FeatureMatrix& x, std::span<const int> y) {
  if (x.cols() != model.input_dim()) {
    throw DataError("feature matrix has " + std::to_string(x.cols()) + " columns, model expects " +
                    std::to_string(model.input_dim()));
  }
  if (x.rows() != y.size()) {
    throw DataError("feature matrix has " + std::to_string(x.rows()) + " rows but " + std::to_string(y.size()) +
                    " labels");
  }
  for (int label : y) {
    if (label != 0 && label != 1) throw DataError("labels must be binary");
  }
}

}  // namespace detail

/// Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12].
inline double bce_loss(const LinearModel& model, const FeatureMatrix& x, std::span<const int> y) {
  detail::check_training_shapes(model, x, y);
  if (x.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double p = clamp_probability(predict_score(model, x.row(i)));
    total -= y[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(x.rows());
}

// L2 convention: penalty = (l2 / 2) * ||w||^2, so its gradient is l2 * w. The bias is not penalised.
inline double l2_term(const LinearModel& model, double l2_penalty) {
  double sq = 0.0;
  for (double w : model.weights) sq += w * w;
  return 0.5 * l2_penalty * sq;
}

inline double objective(const LinearModel& model, const FeatureMatrix& x, std::span<const int> y, double l2_penalty) {
  return bce_loss(model, x, y) + l2_term(model, l2_penalty);
}

struct Gradient {
  Vector weights;
  double bias = 0.0;
};

/// Analytic gradient of objective() with respect to the weights and bias.
inline Gradient gradient(const LinearModel& model, const FeatureMatrix& x, std::span<const int> y,
                         double l2_penalty = 0.0) {
  detail::check_training_shapes(model, x, y);
  Gradient g{Vector(model.input_dim(), 0.0), 0.0};
  if (!x.empty()) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto row = x.row(i);
      const double residual = predict_score(model, row) - static_cast<double>(y[i]);
      if (model.standardizer) {
        for (std::size_t j = 0; j < row.size(); ++j) g.weights[j] += residual * model.standardizer->apply(j, row[j]);
      } else {
        for (std::size_t j = 0; j < row.size(); ++j) g.weights[j] += residual * row[j];
      }
      g.bias += residual;
    }
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (double& gw : g.weights) gw *= inv_n;
    g.bias *= inv_n;
  }
  for (std::size_t j = 0; j < g.weights.size(); ++j) g.weights[j] += l2_penalty * model.weights[j];
  return g;
}

struct TrainConfig {
  double learning_rate = 0.5;
  int max_epochs = 2000;
  // 0 means full batch.
  std::size_t batch_size = 0;
  int patience = 20;
  double min_delta = 1e-5;
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;
  // z-score features with train-set statistics (stored in the model).
  bool standardize = true;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be positive");
    if (max_epochs <= 0) throw DataError("max_epochs must be positive");
    if (patience <= 0) throw DataError("patience must be positive");
    if (!(min_delta >= 0.0)) throw DataError("min_delta must be non-negative");
    if (!(l2_penalty >= 0.0)) throw DataError("l2_penalty must be non-negative");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> eval_loss;
  // True when this epoch produced the snapshot that train() returns (so far).
  bool best = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_on_plateau = false;
};

/// Gradient descent from a zero initialisation. With a non-empty eval set the
/// run stops once eval loss has failed to improve by more than min_delta for
/// `patience` consecutive epochs and the best-eval-loss snapshot is returned;
/// otherwise it runs max_epochs and returns the final model.
inline LinearModel train(const FeatureMatrix& x_train, std::span<const int> y_train, const FeatureMatrix& x_eval,
                         std::span<const int> y_eval, const TrainConfig& config, TrainLog* log = nullptr) {
  config.validate();
  if (x_train.empty()) throw DataError("training set is empty");
  const std::size_t dim = x_train.cols();
  LinearModel probe(dim);
  detail::check_training_shapes(probe, x_train, y_train);
  const bool has_eval = !x_eval.empty();
  if (has_eval) detail::check_training_shapes(probe, x_eval, y_eval);

  std::optional<Standardizer> standardizer;
  FeatureMatrix train_x = x_train;
  FeatureMatrix eval_x = x_eval;
  if (config.standardize) {
    standardizer = Standardizer::fit(x_train);
    train_x = standardizer->transform(x_train);
    if (has_eval) eval_x = standardizer->transform(x_eval);
  }

  LinearModel model(dim);
  LinearModel best = model;
  TrainLog local_log;
  TrainLog& out = log ? *log : local_log;
  out = TrainLog{};

  auto record_epoch = [&](int epoch) -> std::optional<double> {
    EpochRecord rec{epoch, bce_loss(model, train_x, y_train), std::nullopt, false};
    if (!std::isfinite(rec.train_loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + " (learning_rate=" +
                         std::to_string(config.learning_rate) + ")");
    }
    if (has_eval) {
      rec.eval_loss = bce_loss(model, eval_x, y_eval);
      if (!std::isfinite(*rec.eval_loss)) {
        throw NumericError("non-finite eval loss at epoch " + std::to_string(epoch));
      }
    }
    out.epochs.push_back(rec);
    return rec.eval_loss;
  };

  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  if (auto l = record_epoch(0); l) {
    best_loss = *l;
    out.epochs.back().best = true;
  }

  std::vector<std::size_t> order(train_x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config.seed);
  const std::size_t batch = config.batch_size == 0 ? train_x.rows() : std::min(config.batch_size, train_x.rows());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (batch == train_x.rows()) {
      const Gradient g = gradient(model, train_x, y_train, config.l2_penalty);
      for (std::size_t j = 0; j < dim; ++j) model.weights[j] -= config.learning_rate * g.weights[j];
      model.bias -= config.learning_rate * g.bias;
    } else {
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        FeatureMatrix xb(end - start, dim);
        std::vector<int> yb(end - start);
        for (std::size_t k = start; k < end; ++k) {
          std::copy_n(train_x.row(order[k]).begin(), dim, xb.row(k - start).begin());
          yb[k - start] = y_train[order[k]];
        }
        const Gradient g = gradient(model, xb, yb, config.l2_penalty);
        for (std::size_t j = 0; j < dim; ++j) model.weights[j] -= config.learning_rate * g.weights[j];
        model.bias -= config.learning_rate * g.bias;
      }
    }
    if (!all_finite(model.weights) || !std::isfinite(model.bias)) {
      throw NumericError("non-finite parameters at epoch " + std::to_string(epoch));
    }

    const auto eval_loss = record_epoch(epoch);
    if (!has_eval) continue;
    if (*eval_loss < best_loss - config.min_delta) {
      best_loss = *eval_loss;
      best = model;
      stale = 0;
      out.best_epoch = epoch;
      out.epochs.back().best = true;
    } else if (++stale >= config.patience) {
      out.stopped_on_plateau = true;
      break;
    }
  }

  LinearModel result = has_eval ? best : model;
  if (!has_eval) out.best_epoch = static_cast<int>(out.epochs.back().epoch);
  result.standardizer = standardizer;
  return result;
}

struct CalibratedClassifier {
  LinearModel model;
  double threshold = 0.5;

  double score(std::span<const double> x) const { return predict_score(model, x); }
  bool predict(std::span<const double> x) const { return score(x) >= threshold; }

  friend bool operator==(const CalibratedClassifier&, const CalibratedClassifier&) = default;
};

/// Threshold in (0,1) that maximises accuracy on (scores, labels).
///
/// Candidates are 0.5 and the midpoints between consecutive distinct values of
/// {0, scores..., 1}; the outer midpoints allow "everything positive" and
/// "everything negative". Ties go to the candidate nearest 0.5, then the smaller one.
inline double choose_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw DataError("cannot calibrate a threshold on an empty eval set");
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");

  std::vector<double> real_scores, fake_scores, points{0.0, 1.0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] == 1 ? fake_scores : real_scores).push_back(scores[i]);
    points.push_back(std::clamp(scores[i], 0.0, 1.0));
  }
  std::sort(real_scores.begin(), real_scores.end());
  std::sort(fake_scores.begin(), fake_scores.end());
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<double> candidates{0.5};
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double mid = points[i - 1] + 0.5 * (points[i] - points[i - 1]);
    if (mid > 0.0 && mid < 1.0) candidates.push_back(mid);
  }

  auto correct = [&](double t) {
    const auto real_below = std::lower_bound(real_scores.begin(), real_scores.end(), t) - real_scores.begin();
    const auto fake_above = fake_scores.end() - std::lower_bound(fake_scores.begin(), fake_scores.end(), t);
    return static_cast<std::size_t>(real_below + fake_above);
  };

  double best_t = 0.5;
  std::size_t best_correct = correct(0.5);
  for (double t : candidates) {
    const std::size_t c = correct(t);
    const double d = std::abs(t - 0.5), best_d = std::abs(best_t - 0.5);
    if (c > best_correct || (c == best_correct && (d < best_d || (d == best_d && t < best_t)))) {
      best_correct = c;
      best_t = t;
    }
  }
  return best_t;
}

inline CalibratedClassifier calibrate_threshold(const LinearModel& model, const FeatureMatrix& x_eval,
                                                std::span<const int> y_eval) {
  if (x_eval.empty()) throw DataError("cannot calibrate a threshold on an empty eval set");
  detail::check_training_shapes(model, x_eval, y_eval);
  std::vector<double> scores(x_eval.rows());
  for (std::size_t i = 0; i < x_eval.rows(); ++i) scores[i] = predict_score(model, x_eval.row(i));
  return {model, choose_threshold(scores, y_eval)};
}

// Serialisation. nlohmann/json emits the shortest decimal that round-trips, so
// weights reload bit-for-bit.

inline nlohmann::json to_json(const LinearModel& m) {
  nlohmann::json j = {{"input_dim", m.input_dim()}, {"weights", m.weights}, {"bias", m.bias}};
  if (m.standardizer) j["standardizer"] = {{"mean", m.standardizer->mean}, {"scale", m.standardizer->scale}};
  return j;
}

inline LinearModel linear_model_from_json(const nlohmann::json& j) {
  LinearModel m(j.at("weights").get<Vector>(), j.at("bias").get<double>());
  if (j.at("input_dim").get<std::size_t>() != m.input_dim()) throw DataError("linear model: input_dim mismatch");
  if (j.contains("standardizer")) {
    Standardizer s{j.at("standardizer").at("mean").get<Vector>(), j.at("standardizer").at("scale").get<Vector>()};
    if (s.mean.size() != m.input_dim() || s.scale.size() != m.input_dim()) {
      throw DataError("linear model: standardizer dimension mismatch");
    }
    m.standardizer = std::move(s);
  }
  if (!all_finite(m.weights) || !std::isfinite(m.bias)) throw DataError("linear model: non-finite parameters");
  return m;
}

inline nlohmann::json to_json(const CalibratedClassifier& c) {
  return {{"model", to_json(c.model)}, {"threshold", c.threshold}};
}

inline CalibratedClassifier calibrated_from_json(const nlohmann::json& j) {
  CalibratedClassifier c{linear_model_from_json(j.at("model")), j.at("threshold").get<double>()};
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw DataError("calibrated classifier: threshold outside (0,1)");
  return c;
}

inline std::vector<int> labels_of(std::span<const FeatureRecord> records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label.value());
  return y;
}

/// Trains on (train) and picks the threshold on (eval), falling back to the
/// train set for calibration when eval is empty.
inline CalibratedClassifier train_calibrated(const FeatureMatrix& x_train, std::span<const int> y_train,
                                             const FeatureMatrix& x_eval, std::span<const int> y_eval,
                                             const TrainConfig& config, TrainLog* log = nullptr) {
  LinearModel model = train(x_train, y_train, x_eval, y_eval, config, log);
  return x_eval.empty() ? calibrate_threshold(model, x_train, y_train) : calibrate_threshold(model, x_eval, y_eval);
}

}  // namespace mirage
