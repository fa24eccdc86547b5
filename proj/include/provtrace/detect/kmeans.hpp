#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/error.hpp"
#include "provtrace/linalg.hpp"

namespace provtrace::detect {

/// How the detection threshold was chosen.
struct Calibration {
  std::string policy = "unset";
  std::size_t samples = 0;
  double min_score = 0, max_score = 0, mean_score = 0;
};

/// K centroids of benign features plus the calibrated detection threshold.
struct ClusterModel {
  std::size_t k = 0;
  MatrixD centers;  // k x d
  double threshold = 0;
  double inertia = 0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // after each Lloyd assignment step
  Calibration calibration;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(centers.cols()); }
};

inline void to_json(nlohmann::json& j, const ClusterModel& m) {
  j = nlohmann::json{
      {"K", m.k},
      {"dim", m.dim()},
      {"centers", std::vector<double>(m.centers.data(), m.centers.data() + m.centers.size())},
      {"threshold", m.threshold},
      {"inertia", m.inertia},
      {"iterations", m.iterations},
      {"calibration",
       {{"policy", m.calibration.policy},
        {"samples", m.calibration.samples},
        {"min_score", m.calibration.min_score},
        {"max_score", m.calibration.max_score},
        {"mean_score", m.calibration.mean_score}}}};
}

inline void from_json(const nlohmann::json& j, ClusterModel& m) {
  m.k = j.at("K").get<std::size_t>();
  const auto d = j.at("dim").get<Eigen::Index>();
  const auto flat = j.at("centers").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != static_cast<Eigen::Index>(m.k) * d)
    throw SchemaError(0, "cluster model centers have the wrong size");
  m.centers = Eigen::Map<const MatrixD>(flat.data(), static_cast<Eigen::Index>(m.k), d);
  m.threshold = j.at("threshold").get<double>();
  m.inertia = j.value("inertia", 0.0);
  m.iterations = j.value("iterations", std::size_t{0});
  const auto& c = j.at("calibration");
  m.calibration.policy = c.at("policy").get<std::string>();
  m.calibration.samples = c.at("samples").get<std::size_t>();
  m.calibration.min_score = c.at("min_score").get<double>();
  m.calibration.max_score = c.at("max_score").get<double>();
  m.calibration.mean_score = c.at("mean_score").get<double>();
}

namespace detail {

inline std::pair<Eigen::Index, double> nearest(const MatrixD& centers,
                                               const auto& point) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best, best_d};
}

}  // namespace detail

/// k-means++ seeding: the first center uniformly, each next one with
/// probability proportional to squared distance from the nearest chosen one.
inline MatrixD kmeans_plus_plus(const MatrixD& x, std::size_t k, std::mt19937_64& rng) {
  const auto n = x.rows();
  MatrixD centers(static_cast<Eigen::Index>(k), x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centers.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (double d : d2) total += d;
    Eigen::Index pick;
    if (total > 0) {
      std::discrete_distribution<Eigen::Index> dist(d2.begin(), d2.end());
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    centers.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (x.row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
  }
  return centers;
}

/// Lloyd iterations from the given centers until no assignment changes or
/// max_iter passes. A cluster that empties is re-seeded at the point farthest
/// from its current center.
inline ClusterModel lloyd(const MatrixD& x, MatrixD centers, std::size_t max_iter = 300) {
  const auto n = x.rows();
  const auto k = centers.rows();
  ClusterModel model;
  model.k = static_cast<std::size_t>(k);
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [c, d] = detail::nearest(centers, x.row(i));
      if (c != assign[i]) changed = true;
      assign[i] = c;
      dist[i] = d;
      inertia += d;
    }
    model.inertia_history.push_back(inertia);
    model.iterations = iter + 1;
    if (!changed) break;

    MatrixD sums = MatrixD::Zero(k, x.cols());
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(i);
      ++sizes[assign[i]];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (sizes[c] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(sizes[c]);
        continue;
      }
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      centers.row(c) = x.row(far);
      dist[far] = 0;
    }
  }
  model.centers = std::move(centers);
  model.inertia = 0;
  for (Eigen::Index i = 0; i < n; ++i) model.inertia += detail::nearest(model.centers, x.row(i)).second;
  return model;
}

/// K-means on the rows of `features`, k-means++ seeded. Deterministic for a
/// fixed seed. The threshold is left unset.
inline ClusterModel fit_kmeans(const MatrixD& features, std::size_t k,
                               std::uint64_t seed, std::size_t max_iter = 300) {
  if (k < 2) throw ContractError("K must be >= 2");
  if (static_cast<std::size_t>(features.rows()) < k)
    throw ContractError("K-means needs at least K=" + std::to_string(k) +
                        " features, got " + std::to_string(features.rows()));
  if (!features.allFinite()) throw ContractError("features must be finite");
  std::mt19937_64 rng(seed);
  return lloyd(features, kmeans_plus_plus(features, k, rng), max_iter);
}

/// Euclidean distance to the nearest center.
inline double score(std::span<const double> feature, const ClusterModel& model) {
  if (feature.size() != model.dim())
    throw ContractError("feature dimension does not match the cluster model");
  Eigen::Map<const RowVectorD> f(feature.data(), static_cast<Eigen::Index>(feature.size()));
  return std::sqrt(detail::nearest(model.centers, f).second);
}

inline double score(const RowVectorD& feature, const ClusterModel& model) {
  return score(std::span<const double>(feature.data(), static_cast<std::size_t>(feature.size())),
               model);
}

}  // namespace provtrace::detect
