#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/pipeline/core.hpp"

namespace provtrace::pipeline {

/// Encoder features of one fold's train, validation and test graphs.
struct FoldFeatures {
  struct Section {
    std::vector<std::string> ids;
    std::vector<Label> labels;
    MatrixD rows;
    bool operator==(const Section&) const = default;
  };
  Section train, validation, test;
  bool operator==(const FoldFeatures&) const = default;
};

inline void to_json(nlohmann::json& j, const FoldFeatures::Section& s) {
  std::vector<std::string> labels;
  for (auto l : s.labels) labels.emplace_back(to_string(l));
  j = nlohmann::json{{"ids", s.ids},
                     {"labels", labels},
                     {"dim", s.rows.cols()},
                     {"rows", std::vector<double>(s.rows.data(), s.rows.data() + s.rows.size())}};
}

inline void from_json(const nlohmann::json& j, FoldFeatures::Section& s) {
  j.at("ids").get_to(s.ids);
  s.labels.clear();
  for (const auto& l : j.at("labels")) {
    auto parsed = parse_label(l.get<std::string>());
    if (!parsed) throw SchemaError(0, "unknown label in features");
    s.labels.push_back(*parsed);
  }
  const auto dim = j.at("dim").get<Eigen::Index>();
  const auto flat = j.at("rows").get<std::vector<double>>();
  const auto n = static_cast<Eigen::Index>(s.ids.size());
  if (s.labels.size() != s.ids.size() || static_cast<Eigen::Index>(flat.size()) != n * dim)
    throw SchemaError(0, "feature section shape mismatch");
  s.rows = Eigen::Map<const MatrixD>(flat.data(), n, dim);
}

inline void to_json(nlohmann::json& j, const FoldFeatures& f) {
  j = nlohmann::json{{"train", f.train}, {"validation", f.validation}, {"test", f.test}};
}

inline void from_json(const nlohmann::json& j, FoldFeatures& f) {
  j.at("train").get_to(f.train);
  j.at("validation").get_to(f.validation);
  j.at("test").get_to(f.test);
}

/// Everything the learned stages of one fold produce.
struct FoldWork {
  embed::EmbeddingTable table;
  TrainedModel model;
  FoldFeatures features;
};

/// walk -> embed -> seq -> train -> feature extraction for one fold. Only the
/// fold's training graphs reach the walk corpus and the model; validation
/// graphs are only encoded.
inline FoldWork compute_fold(const std::vector<ProvenanceGraph>& graphs, const Split& split,
                             const PipelineConfig& c, StageCounters& counters) {
  require_benign(graphs, split.train, "train");
  require_benign(graphs, split.validation, "validation");
  FoldWork w;
  const auto corpus = build_corpus(graphs, split.train, c);
  ++counters.walk;
  w.table = embed::train_skipgram(corpus, c.skipgram);
  ++counters.embed;
  const auto train_seqs = build_sequences(graphs, split.train, w.table, c);
  const auto val_seqs = build_sequences(graphs, split.validation, w.table, c);
  const auto test_seqs = build_sequences(graphs, split.test, w.table, c);
  ++counters.seq;
  w.model = train_model(train_seqs, c);
  ++counters.train;
  auto section = [&](const std::vector<embed::FeatureSequence>& seqs) {
    FoldFeatures::Section s;
    for (const auto& q : seqs) {
      s.ids.push_back(q.graph_id);
      s.labels.push_back(q.label);
    }
    s.rows = extract_features(seqs, w.model);
    return s;
  };
  w.features = {section(train_seqs), section(val_seqs), section(test_seqs)};
  return w;
}

/// Scores and threshold a detector assigns to one fold's test graphs, in
/// split.test order.
struct FoldScores {
  std::vector<double> scores;
  double threshold = 0;
};

using FoldScorer = std::function<FoldScores(const FoldPlan&)>;

struct FoldSummary {
  std::size_t fold = 0;
  std::size_t train = 0, validation = 0, test = 0;
  double threshold = 0;
  detect::Confusion confusion;
  std::optional<double> auc_pr;
};

struct CrossValReport {
  std::vector<FoldSummary> folds;
  std::optional<double> mean_auc_pr;  // over folds that have both labels
};

inline FoldSummary summarize(const std::vector<ProvenanceGraph>& graphs, const FoldPlan& plan,
                             const FoldScores& s, detect::EvaluationReport* report_out = nullptr) {
  if (s.scores.size() != plan.split.test.size())
    throw ContractError("scorer returned " + std::to_string(s.scores.size()) + " scores for " +
                        std::to_string(plan.split.test.size()) + " test graphs");
  std::vector<detect::ScoredGraph> scored;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const auto& g = graphs[plan.split.test[i]];
    scored.push_back(detect::make_scored(g.id(), s.scores[i], g.label(), s.threshold));
  }
  detect::ClusterModel threshold_only;
  threshold_only.threshold = s.threshold;
  auto report = detect::evaluate(std::move(scored), threshold_only);
  FoldSummary out{plan.fold,        plan.split.train.size(), plan.split.validation.size(),
                  plan.split.test.size(), s.threshold,      report.confusion,
                  report.auc_pr()};
  if (report_out) *report_out = std::move(report);
  return out;
}

inline std::optional<double> mean_auc(const std::vector<FoldSummary>& folds) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& f : folds)
    if (f.auc_pr) {
      sum += *f.auc_pr;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Runs `scorer` on every fold and aggregates AUC-PR.
inline CrossValReport cross_validate(const std::vector<ProvenanceGraph>& graphs,
                                     const std::vector<FoldPlan>& plans, const FoldScorer& scorer) {
  CrossValReport report;
  for (const auto& plan : plans) report.folds.push_back(summarize(graphs, plan, scorer(plan)));
  report.mean_auc_pr = mean_auc(report.folds);
  return report;
}

/// The learned detector's scores for one fold at a given K.
inline std::pair<detect::ClusterModel, FoldScores> score_fold(const FoldFeatures& f, std::size_t k,
                                                              const detect::ThresholdPolicy& policy,
                                                              std::uint64_t seed, StageCounters& counters) {
  auto model = fit_detector(f.train.rows, f.validation.rows, k, policy, seed);
  ++counters.fit;
  FoldScores s{score_rows(f.test.rows, model), model.threshold};
  ++counters.score;
  return {std::move(model), std::move(s)};
}

inline nlohmann::json to_json(const FoldSummary& f) {
  return {{"fold", f.fold},
          {"train", f.train},
          {"validation", f.validation},
          {"test", f.test},
          {"threshold", f.threshold},
          {"tp", f.confusion.tp},
          {"fp", f.confusion.fp},
          {"tn", f.confusion.tn},
          {"fn", f.confusion.fn},
          {"auc_pr", f.auc_pr ? nlohmann::json(*f.auc_pr) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const CrossValReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  return {{"folds", folds},
          {"mean_auc_pr", r.mean_auc_pr ? nlohmann::json(*r.mean_auc_pr) : nlohmann::json(nullptr)}};
}

}  // namespace provtrace::pipeline
