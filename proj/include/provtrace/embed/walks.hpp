#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"
#include "provtrace/random.hpp"

namespace provtrace::embed {

/// Transition law of the walk. Only the uniform out-edge walk is implemented;
/// the enum leaves room for biased (node2vec-style) variants.
enum class WalkStrategy { uniform };

struct WalkConfig {
  std::size_t length = 10;  // steps after the source node
  std::size_t walks_per_node = 5;
  std::uint64_t seed = 0;
  WalkStrategy strategy = WalkStrategy::uniform;

  void validate() const {
    if (length < 1) throw ConfigError("walk length must be >= 1");
    if (walks_per_node < 1) throw ConfigError("walks_per_node must be >= 1");
  }
};

/// How a node becomes a word. `type` uses the node type alone; `contextual`
/// appends the type of the edge the node was first reached by
/// (`process/write`), or `-` for nodes with no incoming edge.
enum class TokenMode { type, contextual };

using Walk = std::vector<NodeIndex>;

/// Directed random walks: `walks_per_node` walks from every node, each step
/// picks one of the current node's N out-edges with probability 1/N. A walk
/// stops early only at a node without out-edges, so it holds at most
/// length + 1 nodes. Each source node draws from its own stream seeded by
/// (seed, node index), which keeps the result independent of evaluation
/// order.
inline std::vector<Walk> generate_node_walks(const ProvenanceGraph& g,
                                             const WalkConfig& config) {
  config.validate();
  const auto out = g.out_edges();
  const auto& edges = g.edges();
  std::vector<Walk> walks;
  walks.reserve(g.node_count() * config.walks_per_node);
  for (NodeIndex source = 0; source < g.node_count(); ++source) {
    std::mt19937_64 rng(derive_seed(config.seed, std::uint64_t{source}));
    for (std::size_t w = 0; w < config.walks_per_node; ++w) {
      Walk walk{source};
      walk.reserve(config.length + 1);
      NodeIndex current = source;
      for (std::size_t step = 0; step < config.length; ++step) {
        const auto& choices = out[current];
        if (choices.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
        current = edges[choices[pick(rng)]].dst;
        walk.push_back(current);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

namespace detail {
inline std::string sanitize_token(std::string s) {
  for (char& c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') c = '_';
  return s;
}
}  // namespace detail

/// One token per node, indexed like g.nodes().
inline std::vector<std::string> node_tokens(const ProvenanceGraph& g,
                                            TokenMode mode) {
  std::vector<std::string> tokens;
  tokens.reserve(g.node_count());
  for (const auto& n : g.nodes()) tokens.push_back(detail::sanitize_token(n.type));
  if (mode == TokenMode::contextual) {
    std::vector<const EdgeRecord*> arrival(g.node_count(), nullptr);
    for (const auto& e : g.edges())
      if (!arrival[e.dst]) arrival[e.dst] = &e;
    for (NodeIndex i = 0; i < g.node_count(); ++i)
      tokens[i] += "/" + (arrival[i] ? detail::sanitize_token(arrival[i]->type)
                                     : std::string("-"));
  }
  return tokens;
}

/// Token sequences fed to skip-gram. Serialized one walk per line, tokens
/// separated by single spaces.
struct WalkCorpus {
  std::vector<std::vector<std::string>> walks;

  bool empty() const noexcept { return walks.empty(); }

  std::size_t token_count() const noexcept {
    std::size_t n = 0;
    for (const auto& w : walks) n += w.size();
    return n;
  }

  void append(const WalkCorpus& other) {
    walks.insert(walks.end(), other.walks.begin(), other.walks.end());
  }

  void write(std::ostream& out) const {
    for (const auto& walk : walks) {
      for (std::size_t i = 0; i < walk.size(); ++i)
        out << (i ? " " : "") << walk[i];
      out << '\n';
    }
  }

  static WalkCorpus read(std::istream& in) {
    WalkCorpus corpus;
    std::string line, token;
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      std::vector<std::string> walk;
      while (fields >> token) walk.push_back(token);
      if (!walk.empty()) corpus.walks.push_back(std::move(walk));
    }
    return corpus;
  }

  bool operator==(const WalkCorpus&) const = default;
};

inline WalkCorpus generate_walks(const ProvenanceGraph& g,
                                 const WalkConfig& config,
                                 TokenMode mode = TokenMode::type) {
  const auto tokens = node_tokens(g, mode);
  WalkCorpus corpus;
  for (const auto& walk : generate_node_walks(g, config)) {
    std::vector<std::string> words;
    words.reserve(walk.size());
    for (NodeIndex n : walk) words.push_back(tokens[n]);
    corpus.walks.push_back(std::move(words));
  }
  return corpus;
}

/// Corpus over several graphs; each graph walks with a seed derived from
/// (config.seed, graph id).
inline WalkCorpus generate_corpus(std::span<const ProvenanceGraph> graphs,
                                  const WalkConfig& config,
                                  TokenMode mode = TokenMode::type) {
  WalkCorpus corpus;
  for (const auto& g : graphs) {
    WalkConfig per_graph = config;
    per_graph.seed = derive_seed(config.seed, g.id());
    corpus.append(generate_walks(g, per_graph, mode));
  }
  return corpus;
}

}  // namespace provtrace::embed
