#pragma once

// In-memory pipeline stages. Every stage that learns something takes the
// graph indices it may learn from and refuses attack-labeled graphs.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "provtrace/detect/kmeans.hpp"
#include "provtrace/detect/metrics.hpp"
#include "provtrace/detect/threshold.hpp"
#include "provtrace/embed/sequence.hpp"
#include "provtrace/embed/skipgram.hpp"
#include "provtrace/embed/walks.hpp"
#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"
#include "provtrace/ingest.hpp"
#include "provtrace/nn/checkpoint.hpp"
#include "provtrace/nn/trainer.hpp"
#include "provtrace/pipeline/config.hpp"
#include "provtrace/reduce.hpp"
#include "provtrace/synth.hpp"

namespace provtrace::pipeline {

/// How often each stage actually ran (cache hits do not count).
struct StageCounters {
  std::atomic<std::size_t> ingest{0}, reduce{0}, walk{0}, embed{0}, seq{0}, train{0}, fit{0},
      score{0};

  std::map<std::string, std::size_t> snapshot() const {
    return {{"ingest", ingest}, {"reduce", reduce}, {"walk", walk}, {"embed", embed},
            {"seq", seq},       {"train", train},   {"fit", fit},   {"score", score}};
  }
};

using Indices = std::vector<std::size_t>;

struct Split {
  Indices train, validation, test;
};

/// The dataset named by the config, labeled.
inline std::vector<ProvenanceGraph> load_dataset(const PipelineConfig& c) {
  switch (c.format) {
    case DataFormat::synthetic:
      return synth::default_benchmark(c.stage_seed("synth"));
    case DataFormat::jsonl: {
      std::ifstream in(c.data_path);
      if (!in) throw ConfigError("cannot read dataset " + c.data_path);
      return parse_jsonl(in);
    }
    case DataFormat::streamspot: {
      std::ifstream in(c.data_path);
      if (!in) throw ConfigError("cannot read dataset " + c.data_path);
      auto graphs = parse_streamspot(in);
      for (auto& g : graphs) {
        long long id = 0;
        const auto& s = g.id();
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
        const bool numeric = ec == std::errc() && end == s.data() + s.size();
        const bool attack = numeric && std::any_of(c.attack_graphs.begin(), c.attack_graphs.end(),
                                                   [&](const IdRange& r) { return r.contains(id); });
        g.set_label(attack ? Label::attack : Label::benign);
      }
      return graphs;
    }
  }
  return {};
}

inline std::vector<ProvenanceGraph> reduce_all(const std::vector<ProvenanceGraph>& graphs) {
  std::vector<ProvenanceGraph> out;
  out.reserve(graphs.size());
  for (const auto& g : graphs) out.push_back(cpr_reduce(g));
  return out;
}

inline Indices indices_with(const std::vector<ProvenanceGraph>& graphs, Label label) {
  Indices out;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if (graphs[i].label() == label) out.push_back(i);
  return out;
}

namespace detail {

inline std::size_t validation_size(std::size_t pool, double fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pool))));
}

/// Moves the first `fraction` of `pool` (at least one) into validation; the
/// rest is training. Both stay in ascending index order.
inline void carve_validation(Indices pool, double fraction, Split& split) {
  const auto n_val = validation_size(pool.size(), fraction);
  if (pool.size() <= n_val)
    throw ContractError("too few benign graphs to hold out a validation slice");
  split.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
}

}  // namespace detail

/// Single train/validation/test split: a shuffled `test_fraction` of the
/// benign graphs plus every non-benign graph is test; of the remaining benign
/// graphs, `validation_fraction` calibrates the threshold.
inline Split holdout_split(const std::vector<ProvenanceGraph>& graphs, double test_fraction,
                           double validation_fraction, std::uint64_t seed) {
  Indices benign = indices_with(graphs, Label::benign);
  if (benign.size() < 3) throw ContractError("need at least 3 benign graphs, got " + std::to_string(benign.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(benign.begin(), benign.end(), rng);
  const auto n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(benign.size()))), 1,
      benign.size() - 2);
  Split split;
  split.test.assign(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(n_test));
  detail::carve_validation(Indices(benign.begin() + static_cast<std::ptrdiff_t>(n_test), benign.end()),
                           validation_fraction, split);
  for (std::size_t i = 0; i < graphs.size(); ++i)
    if (graphs[i].label() != Label::benign) split.test.push_back(i);
  std::sort(split.test.begin(), split.test.end());
  return split;
}

struct FoldPlan {
  std::size_t fold = 0;
  Split split;
};

/// k-fold partition of the benign graphs (shuffled, sizes differ by at most
/// one). Fold f tests on its own benign part plus every non-benign graph and
/// trains on the other benign graphs minus a validation slice.
inline std::vector<FoldPlan> make_folds(const std::vector<ProvenanceGraph>& graphs,
                                        std::size_t folds, double validation_fraction,
                                        std::uint64_t seed) {
  Indices benign = indices_with(graphs, Label::benign);
  if (folds < 2) throw ConfigError("need at least 2 folds");
  if (benign.size() < folds)
    throw ContractError("cross-validation needs at least " + std::to_string(folds) +
                        " benign graphs, got " + std::to_string(benign.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(benign.begin(), benign.end(), rng);
  std::vector<FoldPlan> plans(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    plans[f].fold = f;
    Indices rest;
    for (std::size_t i = 0; i < benign.size(); ++i)
      (i % folds == f ? plans[f].split.test : rest).push_back(benign[i]);
    detail::carve_validation(std::move(rest), validation_fraction, plans[f].split);
    for (std::size_t i = 0; i < graphs.size(); ++i)
      if (graphs[i].label() != Label::benign) plans[f].split.test.push_back(i);
    std::sort(plans[f].split.test.begin(), plans[f].split.test.end());
  }
  return plans;
}

/// The config a fold runs under: same settings, seed derived from the fold.
inline PipelineConfig fold_config(PipelineConfig c, std::size_t fold) {
  c.seed = derive_seed(c.seed, std::uint64_t{fold});
  c.finalize();
  return c;
}

inline void require_benign(const std::vector<ProvenanceGraph>& graphs, const Indices& idx,
                           std::string_view stage) {
  for (auto i : idx)
    if (graphs[i].label() != Label::benign)
      throw ContractError(std::string(stage) + ": graph '" + graphs[i].id() +
                          "' is not benign-labeled");
}

inline std::vector<ProvenanceGraph> select(const std::vector<ProvenanceGraph>& graphs, const Indices& idx) {
  std::vector<ProvenanceGraph> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(graphs[i]);
  return out;
}

inline embed::WalkCorpus build_corpus(const std::vector<ProvenanceGraph>& graphs, const Indices& train,
                                      const PipelineConfig& c) {
  require_benign(graphs, train, "walk");
  const auto picked = select(graphs, train);
  return embed::generate_corpus(picked, c.walk, c.tokens);
}

inline std::vector<embed::FeatureSequence> build_sequences(const std::vector<ProvenanceGraph>& graphs,
                                                           const Indices& idx,
                                                           const embed::EmbeddingTable& table,
                                                           const PipelineConfig& c) {
  std::vector<embed::FeatureSequence> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(embed::build_sequence(graphs[i], table, c.model.n_max, c.tokens));
  return out;
}

struct TrainedModel {
  nn::ModelConfig config;
  nn::ModelParams<float> params;
  std::vector<double> loss_history;
};

/// Trains in float32; parameters are exactly what a checkpoint stores.
inline TrainedModel train_model(std::span<const embed::FeatureSequence> train, const PipelineConfig& c) {
  auto result = nn::train<float>(train, c.model, c.train);
  return {c.model, std::move(result.params), std::move(result.loss_history)};
}

inline MatrixD extract_features(std::span<const embed::FeatureSequence> seqs, const TrainedModel& m) {
  MatrixD out(static_cast<Eigen::Index>(seqs.size()), static_cast<Eigen::Index>(m.config.d_model));
  for (std::size_t i = 0; i < seqs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        nn::extract_feature<float>(seqs[i], m.params, m.config).cast<double>();
  return out;
}

/// K-means on training features, threshold calibrated on validation features.
inline detect::ClusterModel fit_detector(const MatrixD& train, const MatrixD& validation, std::size_t k,
                                         const detect::ThresholdPolicy& policy, std::uint64_t seed) {
  auto model = detect::fit_kmeans(train, k, seed);
  return detect::calibrate_threshold(validation, model, policy);
}

inline std::vector<double> score_rows(const MatrixD& features, const detect::ClusterModel& model) {
  std::vector<double> scores(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    scores[static_cast<std::size_t>(i)] = detect::score(RowVectorD(features.row(i)), model);
  return scores;
}

}  // namespace provtrace::pipeline
