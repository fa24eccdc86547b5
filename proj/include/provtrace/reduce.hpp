#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "provtrace/graph.hpp"

namespace provtrace {

/// Causality-preserving reduction.
///
/// An event (u, v, t) at seq s2 is folded into the earlier surviving edge with
/// the same (u, v, t) when no other event touching u or v happened since the
/// last event folded into that edge. The surviving edge keeps its seq and
/// first_seq and accumulates count. Nodes are untouched and surviving edges
/// stay in stream order.
///
/// Works on already-reduced graphs too (counts are summed), and applying it
/// twice gives the same graph as applying it once.
inline ProvenanceGraph cpr_reduce(const ProvenanceGraph& g) {
  struct Open {
    std::size_t edge;        // index into the output edge list
    std::uint64_t last_seq;  // seq of the latest event folded into it
  };
  using Key = std::tuple<NodeIndex, NodeIndex, std::string>;

  ProvenanceGraph out = g.without_edges();
  std::vector<EdgeRecord> kept;
  kept.reserve(g.edge_count());
  std::map<Key, Open> open;
  std::vector<std::optional<std::uint64_t>> last_activity(g.node_count());

  for (const auto& e : g.edges()) {
    auto it = open.find(Key{e.src, e.dst, e.type});
    const bool mergeable = it != open.end() &&
                           last_activity[e.src] == it->second.last_seq &&
                           last_activity[e.dst] == it->second.last_seq;
    if (mergeable) {
      kept[it->second.edge].count += e.count;
      it->second.last_seq = e.seq;
    } else {
      Open entry{kept.size(), e.seq};
      if (it == open.end())
        open.emplace(Key{e.src, e.dst, e.type}, entry);
      else
        it->second = entry;
      kept.push_back(e);
    }
    last_activity[e.src] = e.seq;
    last_activity[e.dst] = e.seq;
  }
  for (auto& e : kept) out.add_edge(std::move(e));
  return out;
}

/// Surviving edge count over original edge count; 1.0 for an edgeless graph.
inline double reduction_ratio(const ProvenanceGraph& original,
                              const ProvenanceGraph& reduced) {
  if (original.edge_count() == 0) return 1.0;
  return static_cast<double>(reduced.edge_count()) /
         static_cast<double>(original.edge_count());
}

}  // namespace provtrace
