#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "provtrace/error.hpp"

namespace provtrace {

enum class Label { benign, attack, unlabeled };

inline std::string_view to_string(Label label) noexcept {
  switch (label) {
    case Label::benign: return "benign";
    case Label::attack: return "attack";
    case Label::unlabeled: break;
  }
  return "unlabeled";
}

inline std::optional<Label> parse_label(std::string_view text) noexcept {
  if (text == "benign") return Label::benign;
  if (text == "attack") return Label::attack;
  if (text == "unlabeled") return Label::unlabeled;
  return std::nullopt;
}

using NodeIndex = std::uint32_t;

struct NodeRecord {
  std::string id;
  std::string type;

  bool operator==(const NodeRecord&) const = default;
};

/// One directed event. Endpoints are indices into the owning graph's node
/// table. `count` and `first_seq` are only meaningful after reduction: a raw
/// edge has count 1 and first_seq == seq.
struct EdgeRecord {
  NodeIndex src = 0;
  NodeIndex dst = 0;
  std::string type;
  std::uint64_t seq = 0;
  std::optional<std::int64_t> timestamp;
  std::uint64_t count = 1;
  std::uint64_t first_seq = 0;

  bool operator==(const EdgeRecord&) const = default;
};

/// Directed multigraph of typed entities and ordered typed events.
///
/// Node ids are local to the graph. The edge list is kept in strictly
/// increasing seq order; add_edge rejects anything else. Cycles and
/// self-loops are allowed and only reported by graph_stats.
class ProvenanceGraph {
 public:
  ProvenanceGraph() = default;
  explicit ProvenanceGraph(std::string id, Label label = Label::unlabeled)
      : id_(std::move(id)), label_(label) {}

  const std::string& id() const noexcept { return id_; }
  Label label() const noexcept { return label_; }
  void set_label(Label label) noexcept { label_ = label; }

  const std::vector<NodeRecord>& nodes() const noexcept { return nodes_; }
  const std::vector<EdgeRecord>& edges() const noexcept { return edges_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const NodeRecord& node(NodeIndex i) const { return nodes_.at(i); }

  std::optional<NodeIndex> find(std::string_view node_id) const {
    auto it = index_.find(std::string(node_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Returns the index of `node_id`, creating it on first sighting.
  /// Throws IntegrityError if the node was already seen with another type.
  NodeIndex add_node(std::string_view node_id, std::string_view type,
                     std::size_t line = 0) {
    if (node_id.empty()) throw SchemaError(line, "empty node id");
    if (type.empty()) throw SchemaError(line, "empty node type");
    auto [it, inserted] = index_.try_emplace(
        std::string(node_id), static_cast<NodeIndex>(nodes_.size()));
    if (inserted) {
      nodes_.push_back({std::string(node_id), std::string(type)});
    } else if (nodes_[it->second].type != type) {
      throw IntegrityError(line, "node '" + std::string(node_id) +
                                     "' retyped from '" +
                                     nodes_[it->second].type + "' to '" +
                                     std::string(type) + "'");
    }
    return it->second;
  }

  void add_edge(EdgeRecord edge, std::size_t line = 0) {
    if (edge.src >= nodes_.size() || edge.dst >= nodes_.size())
      throw IntegrityError(line, "edge endpoint not in node table");
    if (edge.type.empty()) throw SchemaError(line, "empty edge type");
    if (!edges_.empty() && edge.seq <= edges_.back().seq)
      throw IntegrityError(line, "edge seq " + std::to_string(edge.seq) +
                                     " not after " +
                                     std::to_string(edges_.back().seq));
    if (edge.count == 0) throw SchemaError(line, "edge count must be positive");
    edges_.push_back(std::move(edge));
  }

  /// Next seq value that keeps the stream ordered.
  std::uint64_t next_seq() const noexcept {
    return edges_.empty() ? 0 : edges_.back().seq + 1;
  }

  /// Out-adjacency as edge indices per node, in stream order.
  std::vector<std::vector<std::size_t>> out_edges() const {
    std::vector<std::vector<std::size_t>> out(nodes_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e)
      out[edges_[e].src].push_back(e);
    return out;
  }

  /// Graph with the same id, label and nodes but no edges.
  ProvenanceGraph without_edges() const {
    ProvenanceGraph g(id_, label_);
    g.nodes_ = nodes_;
    g.index_ = index_;
    return g;
  }

  bool operator==(const ProvenanceGraph& other) const {
    return id_ == other.id_ && label_ == other.label_ &&
           nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  std::string id_;
  Label label_ = Label::unlabeled;
  std::vector<NodeRecord> nodes_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::vector<EdgeRecord> edges_;
};

}  // namespace provtrace
