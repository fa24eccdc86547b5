#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/embed/skipgram.hpp"
#include "provtrace/embed/walks.hpp"
#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"
#include "provtrace/linalg.hpp"

namespace provtrace::embed {

/// A graph as an n_max x m matrix of node embeddings in temporal order.
/// Rows past `valid` are zero padding with mask == false.
struct FeatureSequence {
  std::string graph_id;
  Label label = Label::unlabeled;
  MatrixD X;
  std::vector<bool> mask;

  std::size_t n_max() const noexcept { return mask.size(); }

  std::size_t valid() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }

  /// The valid rows, for sequences whose mask is a prefix (as built here).
  MatrixD valid_rows() const { return X.topRows(static_cast<Eigen::Index>(valid())); }

  bool operator==(const FeatureSequence&) const = default;
};

inline void to_json(nlohmann::json& j, const FeatureSequence& s) {
  const MatrixD rows = s.valid_rows();
  j = nlohmann::json{{"graph_id", s.graph_id},
                     {"label", to_string(s.label)},
                     {"n_max", s.n_max()},
                     {"m", s.X.cols()},
                     {"valid", s.valid()},
                     {"rows", std::vector<double>(rows.data(), rows.data() + rows.size())}};
}

inline void from_json(const nlohmann::json& j, FeatureSequence& s) {
  s.graph_id = j.at("graph_id").get<std::string>();
  auto label = parse_label(j.at("label").get<std::string>());
  if (!label) throw SchemaError(0, "unknown label in sequence");
  s.label = *label;
  const auto n_max = j.at("n_max").get<Eigen::Index>();
  const auto m = j.at("m").get<Eigen::Index>();
  const auto valid = j.at("valid").get<Eigen::Index>();
  const auto rows = j.at("rows").get<std::vector<double>>();
  if (valid > n_max || static_cast<Eigen::Index>(rows.size()) != valid * m)
    throw SchemaError(0, "sequence shape mismatch");
  s.X = MatrixD::Zero(n_max, m);
  s.X.topRows(valid) = Eigen::Map<const MatrixD>(rows.data(), valid, m);
  s.mask.assign(static_cast<std::size_t>(n_max), false);
  std::fill_n(s.mask.begin(), valid, true);
}

/// Nodes ordered by the seq of their earliest incident event; ties (and nodes
/// with no events, which go last) broken by node id.
inline std::vector<NodeIndex> temporal_node_order(const ProvenanceGraph& g) {
  constexpr auto never = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint64_t> first(g.node_count(), never);
  for (const auto& e : g.edges()) {
    const auto s = std::min(e.seq, e.first_seq);
    first[e.src] = std::min(first[e.src], s);
    first[e.dst] = std::min(first[e.dst], s);
  }
  std::vector<NodeIndex> order(g.node_count());
  std::iota(order.begin(), order.end(), NodeIndex{0});
  std::sort(order.begin(), order.end(), [&](NodeIndex a, NodeIndex b) {
    if (first[a] != first[b]) return first[a] < first[b];
    return g.node(a).id < g.node(b).id;
  });
  return order;
}

/// Positions kept when n items are squeezed into n_max slots:
/// floor(i * n / n_max) for i < n_max, or every position if n <= n_max.
inline std::vector<std::size_t> strided_indices(std::size_t n, std::size_t n_max) {
  std::vector<std::size_t> idx;
  if (n <= n_max) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  idx.reserve(n_max);
  for (std::size_t i = 0; i < n_max; ++i) idx.push_back(i * n / n_max);
  return idx;
}

/// Builds the model input for one graph: each node (in temporal order,
/// strided down to n_max) contributes its token's input vector.
inline FeatureSequence build_sequence(const ProvenanceGraph& g,
                                      const EmbeddingTable& table,
                                      std::size_t n_max,
                                      TokenMode mode = TokenMode::type) {
  if (g.node_count() == 0)
    throw ContractError("graph '" + g.id() + "' has no nodes");
  if (n_max == 0) throw ConfigError("n_max must be >= 1");
  const auto tokens = node_tokens(g, mode);
  const auto order = temporal_node_order(g);
  const auto picks = strided_indices(order.size(), n_max);

  FeatureSequence s;
  s.graph_id = g.id();
  s.label = g.label();
  s.X = MatrixD::Zero(static_cast<Eigen::Index>(n_max),
                      static_cast<Eigen::Index>(table.dim()));
  s.mask.assign(n_max, false);
  for (std::size_t row = 0; row < picks.size(); ++row) {
    const RowVectorD v = table.vector(tokens[order[picks[row]]]);
    const double norm = v.norm();
    s.X.row(static_cast<Eigen::Index>(row)) = norm > 0 ? RowVectorD(v / norm) : v;
    s.mask[row] = true;
  }
  return s;
}

}  // namespace provtrace::embed
