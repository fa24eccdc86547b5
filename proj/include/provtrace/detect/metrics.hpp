#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/detect/kmeans.hpp"
#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"

namespace provtrace::detect {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  /// TP / (TP + FP); 1.0 when nothing is flagged.
  double precision() const noexcept {
    return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  }

  /// TP / (TP + FN); undefined without positives.
  std::optional<double> recall() const noexcept {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
};

/// Confusion counts when "attack" means score > threshold.
inline Confusion confusion_at(std::span<const double> scores,
                              const std::vector<bool>& is_attack, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] > threshold;
    if (is_attack[i]) (flagged ? c.tp : c.fn)++;
    else (flagged ? c.fp : c.tn)++;
  }
  return c;
}

struct PRPoint {
  double threshold, precision, recall;
};

struct PRCurve {
  std::vector<PRPoint> points;  // ascending threshold
  double auc_pr = 0;
};

/// Precision/recall at every distinct score used as threshold, plus one
/// threshold below the smallest score (everything flagged). auc_pr is the
/// step-wise (average precision) area sum (R_i - R_{i-1}) * P_i walking from
/// the highest threshold down.
inline PRCurve pr_curve(std::span<const double> scores, const std::vector<bool>& is_attack) {
  if (scores.size() != is_attack.size())
    throw ContractError("pr_curve: scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count(is_attack.begin(), is_attack.end(), true));
  if (positives == 0 || positives == scores.size())
    throw ContractError("pr_curve needs at least one attack and one benign label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk from the top score down; before consuming a tie group at score s,
  // the flagged set is exactly {score > s}.
  std::vector<PRPoint> descending;
  std::size_t tp = 0, fp = 0, i = 0;
  auto emit = [&](double threshold) {
    const double precision =
        tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    descending.push_back(
        {threshold, precision, static_cast<double>(tp) / static_cast<double>(positives)});
  };
  while (i < order.size()) {
    const double s = scores[order[i]];
    emit(s);
    for (; i < order.size() && scores[order[i]] == s; ++i)
      (is_attack[order[i]] ? tp : fp)++;
  }
  emit(std::nextafter(scores[order.back()], -std::numeric_limits<double>::infinity()));

  PRCurve curve;
  double prev_recall = 0;
  for (const auto& p : descending) {
    curve.auc_pr += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  curve.points.assign(descending.rbegin(), descending.rend());
  return curve;
}

struct ScoredGraph {
  std::string graph_id;
  double score = 0;
  Label label = Label::unlabeled;
  Label verdict = Label::benign;
};

inline ScoredGraph make_scored(std::string graph_id, double score, Label label,
                               double threshold) {
  return {std::move(graph_id), score, label, score > threshold ? Label::attack : Label::benign};
}

struct EvaluationReport {
  double threshold = 0;
  Confusion confusion;
  std::optional<PRCurve> curve;  // only when both labels are present
  std::vector<ScoredGraph> graphs;

  std::optional<double> auc_pr() const {
    return curve ? std::optional<double>(curve->auc_pr) : std::nullopt;
  }
};

/// Confusion counts at the model's threshold plus the threshold-free curve.
inline EvaluationReport evaluate(std::vector<ScoredGraph> graphs, const ClusterModel& model) {
  if (graphs.empty()) throw ContractError("evaluation set is empty");
  EvaluationReport report;
  report.threshold = model.threshold;
  std::vector<double> scores;
  std::vector<bool> attack;
  for (auto& g : graphs) {
    g.verdict = g.score > model.threshold ? Label::attack : Label::benign;
    scores.push_back(g.score);
    attack.push_back(g.label == Label::attack);
  }
  report.confusion = confusion_at(scores, attack, model.threshold);
  const auto positives = static_cast<std::size_t>(std::count(attack.begin(), attack.end(), true));
  if (positives > 0 && positives < attack.size()) report.curve = pr_curve(scores, attack);
  report.graphs = std::move(graphs);
  return report;
}

inline void write_pr_csv(std::ostream& out, const PRCurve& curve) {
  out << "threshold,precision,recall\n";
  out.precision(17);
  for (const auto& p : curve.points)
    out << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
}

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j["threshold"] = r.threshold;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp},
                    {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  j["precision"] = r.confusion.precision();
  if (auto rec = r.confusion.recall()) j["recall"] = *rec;
  else j["recall"] = nullptr;
  if (r.curve) j["auc_pr"] = r.curve->auc_pr;
  else j["auc_pr"] = nullptr;
  auto& graphs = j["graphs"] = nlohmann::json::array();
  for (const auto& g : r.graphs)
    graphs.push_back({{"graph_id", g.graph_id},
                      {"score", g.score},
                      {"label", to_string(g.label)},
                      {"verdict", to_string(g.verdict)}});
}

}  // namespace provtrace::detect
