#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "provtrace/detect/kmeans.hpp"
#include "provtrace/error.hpp"

namespace provtrace::detect {

/// `max` puts the threshold at the largest validation score, so every
/// validation graph is benign. `percentile` uses linear interpolation between
/// order statistics.
struct ThresholdPolicy {
  enum class Kind { max, percentile } kind = Kind::max;
  double percentile = 100;

  static ThresholdPolicy max() { return {}; }
  static ThresholdPolicy at_percentile(double p) {
    if (!(p >= 0 && p <= 100)) throw ConfigError("percentile must lie in [0, 100]");
    return {Kind::percentile, p};
  }

  /// "max" or "percentile:<p>".
  static ThresholdPolicy parse(std::string_view text) {
    if (text == "max") return max();
    constexpr std::string_view prefix = "percentile:";
    if (text.starts_with(prefix)) {
      try {
        return at_percentile(std::stod(std::string(text.substr(prefix.size()))));
      } catch (const std::logic_error&) {
      }
    }
    throw ConfigError("unknown threshold policy '" + std::string(text) + "'");
  }

  std::string to_string() const {
    if (kind == Kind::max) return "max";
    std::string p = std::to_string(percentile);
    p.erase(p.find_last_not_of('0') + 1);
    if (p.back() == '.') p.pop_back();
    return "percentile:" + p;
  }
};

/// Linear-interpolated percentile, p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Threshold from the validation scores alone.
inline ClusterModel calibrate_from_scores(ClusterModel model,
                                          const std::vector<double>& scores,
                                          const ThresholdPolicy& policy) {
  if (scores.empty()) throw ContractError("validation set is empty");
  model.threshold = policy.kind == ThresholdPolicy::Kind::max
                        ? *std::max_element(scores.begin(), scores.end())
                        : percentile(scores, policy.percentile);
  model.calibration.policy = policy.to_string();
  model.calibration.samples = scores.size();
  model.calibration.min_score = *std::min_element(scores.begin(), scores.end());
  model.calibration.max_score = *std::max_element(scores.begin(), scores.end());
  model.calibration.mean_score =
      std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  return model;
}

/// Scores the (benign) validation features and sets the threshold.
inline ClusterModel calibrate_threshold(const MatrixD& validation,
                                        ClusterModel model,
                                        const ThresholdPolicy& policy) {
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(validation.rows()));
  for (Eigen::Index i = 0; i < validation.rows(); ++i)
    scores.push_back(score(RowVectorD(validation.row(i)), model));
  return calibrate_from_scores(std::move(model), scores, policy);
}

}  // namespace provtrace::detect
