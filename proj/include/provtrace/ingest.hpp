#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"

namespace provtrace {

namespace detail {

// Accumulates edges into per-graph buckets, keeping first-appearance order.
class GraphCollector {
 public:
  ProvenanceGraph& get(const std::string& graph_id) {
    auto [it, inserted] = index_.try_emplace(graph_id, graphs_.size());
    if (inserted) graphs_.emplace_back(graph_id);
    return graphs_[it->second];
  }

  std::vector<ProvenanceGraph> take() && { return std::move(graphs_); }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<ProvenanceGraph> graphs_;
};

inline bool strip_line(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return !line.empty();
}

}  // namespace detail

/// Parses the StreamSpot edge format: one edge per line,
/// `src_id \t src_type \t dst_id \t dst_type \t edge_type \t graph_id`.
/// seq is the edge's position within its graph's stream. Blank lines are
/// skipped. Graphs come back unlabeled, in order of first appearance.
inline std::vector<ProvenanceGraph> parse_streamspot(std::istream& in) {
  detail::GraphCollector graphs;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::strip_line(line)) continue;
    fields.clear();
    std::string_view rest(line);
    for (;;) {
      auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 6)
      throw ParseError(line_no, "expected 6 tab-separated fields, got " +
                                    std::to_string(fields.size()));
    if (fields[5].empty()) throw SchemaError(line_no, "empty graph id");
    auto& g = graphs.get(std::string(fields[5]));
    EdgeRecord e;
    e.src = g.add_node(fields[0], fields[1], line_no);
    e.dst = g.add_node(fields[2], fields[3], line_no);
    e.type = std::string(fields[4]);
    e.seq = e.first_seq = g.next_seq();
    g.add_edge(std::move(e), line_no);
  }
  return std::move(graphs).take();
}

/// Parses the JSONL edge format. Required keys: graph_id, src, src_type, dst,
/// dst_type, edge_type. Optional: ts (integer ns), label, and the keys written
/// by emit_jsonl for reduced graphs (seq, count, first_seq). Without an
/// explicit seq the edge is numbered by line order within its graph.
inline std::vector<ProvenanceGraph> parse_jsonl(std::istream& in) {
  using nlohmann::json;
  detail::GraphCollector graphs;
  std::unordered_map<std::string, Label> labels;
  std::string line;
  std::size_t line_no = 0;

  auto required = [&](const json& obj, const char* key) -> std::string {
    auto it = obj.find(key);
    if (it == obj.end())
      throw SchemaError(line_no, std::string("missing key '") + key + "'");
    if (!it->is_string())
      throw SchemaError(line_no, std::string("key '") + key +
                                     "' must be a string");
    return it->get<std::string>();
  };
  auto optional_uint = [&](const json& obj, const char* key)
      -> std::optional<std::uint64_t> {
    auto it = obj.find(key);
    if (it == obj.end()) return std::nullopt;
    if (!it->is_number_unsigned())
      throw SchemaError(line_no, std::string("key '") + key +
                                     "' must be a non-negative integer");
    return it->get<std::uint64_t>();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::strip_line(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& err) {
      throw ParseError(line_no, std::string("invalid JSON: ") + err.what());
    }
    if (!obj.is_object()) throw SchemaError(line_no, "expected a JSON object");

    const std::string graph_id = required(obj, "graph_id");
    if (graph_id.empty()) throw SchemaError(line_no, "empty graph id");
    auto& g = graphs.get(graph_id);

    if (auto it = obj.find("label"); it != obj.end()) {
      auto label = it->is_string() ? parse_label(it->get<std::string>())
                                   : std::nullopt;
      if (!label) throw SchemaError(line_no, "unknown label");
      auto [pos, inserted] = labels.try_emplace(graph_id, *label);
      if (!inserted && pos->second != *label)
        throw IntegrityError(line_no, "graph '" + graph_id + "' relabeled");
      g.set_label(*label);
    }

    EdgeRecord e;
    const auto src = required(obj, "src");
    const auto src_type = required(obj, "src_type");
    const auto dst = required(obj, "dst");
    const auto dst_type = required(obj, "dst_type");
    e.type = required(obj, "edge_type");
    e.src = g.add_node(src, src_type, line_no);
    e.dst = g.add_node(dst, dst_type, line_no);
    e.seq = optional_uint(obj, "seq").value_or(g.next_seq());
    e.count = optional_uint(obj, "count").value_or(1);
    e.first_seq = optional_uint(obj, "first_seq").value_or(e.seq);
    if (auto it = obj.find("ts"); it != obj.end()) {
      if (!it->is_number_integer())
        throw SchemaError(line_no, "key 'ts' must be an integer");
      e.timestamp = it->get<std::int64_t>();
    }
    g.add_edge(std::move(e), line_no);
  }
  return std::move(graphs).take();
}

inline std::vector<ProvenanceGraph> parse_streamspot(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_streamspot(in);
}

inline std::vector<ProvenanceGraph> parse_jsonl(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_jsonl(in);
}

struct EmitOptions {
  /// Write count and first_seq (the reduced-graph form).
  bool reduction_fields = false;
};

/// Writes graphs in the JSONL edge format, one edge per line, graphs in order.
/// seq is always written so that parse_jsonl(emit_jsonl(g)) == g even when
/// seq values have gaps.
inline void emit_jsonl(std::ostream& out,
                       const std::vector<ProvenanceGraph>& graphs,
                       EmitOptions options = {}) {
  for (const auto& g : graphs) {
    for (const auto& e : g.edges()) {
      nlohmann::ordered_json obj;
      obj["graph_id"] = g.id();
      if (g.label() != Label::unlabeled) obj["label"] = to_string(g.label());
      obj["src"] = g.node(e.src).id;
      obj["src_type"] = g.node(e.src).type;
      obj["dst"] = g.node(e.dst).id;
      obj["dst_type"] = g.node(e.dst).type;
      obj["edge_type"] = e.type;
      obj["seq"] = e.seq;
      if (e.timestamp) obj["ts"] = *e.timestamp;
      if (options.reduction_fields) {
        obj["count"] = e.count;
        obj["first_seq"] = e.first_seq;
      }
      out << obj.dump() << '\n';
    }
  }
}

inline std::string emit_jsonl(const std::vector<ProvenanceGraph>& graphs,
                              EmitOptions options = {}) {
  std::ostringstream out;
  emit_jsonl(out, graphs, options);
  return out.str();
}

struct StatsReport {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::map<std::string, std::size_t> node_types;
  std::map<std::string, std::size_t> edge_types;
  std::size_t max_out_degree = 0;
  bool acyclic = true;
  std::size_t self_loops = 0;
};

inline void to_json(nlohmann::json& j, const StatsReport& s) {
  j = nlohmann::json{{"nodes", s.nodes},
                     {"edges", s.edges},
                     {"node_types", s.node_types},
                     {"edge_types", s.edge_types},
                     {"max_out_degree", s.max_out_degree},
                     {"acyclic", s.acyclic},
                     {"self_loops", s.self_loops}};
}

/// True iff the graph has no directed cycle (self-loops count as cycles).
/// Iterative three-colour DFS.
inline bool is_acyclic(const ProvenanceGraph& g) {
  enum : std::uint8_t { white, grey, black };
  std::vector<std::vector<NodeIndex>> succ(g.node_count());
  for (const auto& e : g.edges()) succ[e.src].push_back(e.dst);
  std::vector<std::uint8_t> colour(g.node_count(), white);
  std::vector<std::pair<NodeIndex, std::size_t>> stack;
  for (NodeIndex root = 0; root < g.node_count(); ++root) {
    if (colour[root] != white) continue;
    colour[root] = grey;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < succ[node].size()) {
        NodeIndex child = succ[node][next++];
        if (colour[child] == grey) return false;
        if (colour[child] == white) {
          colour[child] = grey;
          stack.emplace_back(child, 0);
        }
      } else {
        colour[node] = black;
        stack.pop_back();
      }
    }
  }
  return true;
}

inline StatsReport graph_stats(const ProvenanceGraph& g) {
  StatsReport s;
  s.nodes = g.node_count();
  s.edges = g.edge_count();
  for (const auto& n : g.nodes()) ++s.node_types[n.type];
  std::vector<std::size_t> out_degree(g.node_count(), 0);
  for (const auto& e : g.edges()) {
    ++s.edge_types[e.type];
    ++out_degree[e.src];
    if (e.src == e.dst) ++s.self_loops;
  }
  if (!out_degree.empty())
    s.max_out_degree = *std::max_element(out_degree.begin(), out_degree.end());
  s.acyclic = is_acyclic(g);
  return s;
}

}  // namespace provtrace
