#pragma once

// Synthetic provenance streams built by stitching small typed motifs.
//
// A motif is a template of typed slots and typed edges. Instantiating it binds
// each slot either to an existing node of the slot's type (with the slot's
// reuse probability) or to a fresh node, then emits its edges in order, each
// repeated a random number of times back-to-back. A graph is a sequence of
// motif instances drawn by weight until the target edge count is reached.
//
// Attack scenarios additionally weave instances of an extra motif into the
// finished stream: each of its edges is inserted at its own random position,
// so a single instance is spread thinly over the whole stream.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/error.hpp"
#include "provtrace/graph.hpp"
#include "provtrace/random.hpp"

namespace provtrace::synth {

struct Slot {
  std::string type;
  double reuse = 0;  // probability of binding to an existing node of this type
};

struct MotifEdge {
  std::size_t src = 0, dst = 0;  // slot indices
  std::string type;
  std::size_t min_repeat = 1, max_repeat = 1;
};

struct Motif {
  std::string name;
  double weight = 1;
  std::vector<Slot> slots;
  std::vector<MotifEdge> edges;
};

struct AnomalyKnobs {
  std::optional<Motif> extra_motif;
  double extra_motif_edge_fraction = 0.05;  // share of stream edges it may use
  double rewiring_rate = 0;    // chance an edge's dst is redirected
  double rare_edge_rate = 0;   // chance an edge's type becomes rare_edge_type
  std::string rare_edge_type = "rare";
};

struct ScenarioSpec {
  std::string name = "scenario";
  std::vector<std::string> node_types;
  std::vector<std::string> edge_types;
  std::vector<Motif> motifs;
  std::size_t min_edges = 400, max_edges = 800;
  AnomalyKnobs anomaly;
  Label label = Label::benign;
  std::uint64_t seed = 0;

  void validate() const {
    if (motifs.empty()) throw ConfigError("scenario '" + name + "' has no motifs");
    if (min_edges == 0 || min_edges > max_edges)
      throw ConfigError("scenario '" + name + "' has an empty size range");
    auto check = [&](const Motif& m) {
      if (!(m.weight > 0)) throw ConfigError("motif '" + m.name + "' weight must be positive");
      if (m.slots.empty() || m.edges.empty())
        throw ConfigError("motif '" + m.name + "' needs slots and edges");
      for (const auto& s : m.slots)
        if (std::find(node_types.begin(), node_types.end(), s.type) == node_types.end())
          throw ConfigError("motif '" + m.name + "' uses unknown node type " + s.type);
      for (const auto& e : m.edges) {
        if (e.src >= m.slots.size() || e.dst >= m.slots.size())
          throw ConfigError("motif '" + m.name + "' edge references a missing slot");
        if (e.min_repeat < 1 || e.min_repeat > e.max_repeat)
          throw ConfigError("motif '" + m.name + "' has a bad repeat range");
        if (std::find(edge_types.begin(), edge_types.end(), e.type) == edge_types.end())
          throw ConfigError("motif '" + m.name + "' uses unknown edge type " + e.type);
      }
    };
    for (const auto& m : motifs) check(m);
    if (anomaly.extra_motif) check(*anomaly.extra_motif);
    auto rate_ok = [](double r) { return r >= 0 && r <= 1; };
    if (!rate_ok(anomaly.rewiring_rate) || !rate_ok(anomaly.rare_edge_rate) ||
        !rate_ok(anomaly.extra_motif_edge_fraction))
      throw ConfigError("scenario '" + name + "' anomaly rates must lie in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const Slot& s) {
  j = nlohmann::json{{"type", s.type}, {"reuse", s.reuse}};
}

inline void from_json(const nlohmann::json& j, Slot& s) {
  j.at("type").get_to(s.type);
  s.reuse = j.value("reuse", 0.0);
}

inline void to_json(nlohmann::json& j, const MotifEdge& e) {
  j = nlohmann::json{{"src", e.src},   {"dst", e.dst},
                     {"type", e.type}, {"min_repeat", e.min_repeat},
                     {"max_repeat", e.max_repeat}};
}

inline void from_json(const nlohmann::json& j, MotifEdge& e) {
  j.at("src").get_to(e.src);
  j.at("dst").get_to(e.dst);
  j.at("type").get_to(e.type);
  e.min_repeat = j.value("min_repeat", std::size_t{1});
  e.max_repeat = j.value("max_repeat", e.min_repeat);
}

inline void to_json(nlohmann::json& j, const Motif& m) {
  j = nlohmann::json{{"name", m.name}, {"weight", m.weight}, {"slots", m.slots}, {"edges", m.edges}};
}

inline void from_json(const nlohmann::json& j, Motif& m) {
  j.at("name").get_to(m.name);
  m.weight = j.value("weight", 1.0);
  j.at("slots").get_to(m.slots);
  j.at("edges").get_to(m.edges);
}

inline void to_json(nlohmann::json& j, const AnomalyKnobs& a) {
  j = nlohmann::json{{"extra_motif_edge_fraction", a.extra_motif_edge_fraction},
                     {"rewiring_rate", a.rewiring_rate},
                     {"rare_edge_rate", a.rare_edge_rate},
                     {"rare_edge_type", a.rare_edge_type}};
  j["extra_motif"] = a.extra_motif ? nlohmann::json(*a.extra_motif) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, AnomalyKnobs& a) {
  a = AnomalyKnobs{};
  a.extra_motif_edge_fraction = j.value("extra_motif_edge_fraction", a.extra_motif_edge_fraction);
  a.rewiring_rate = j.value("rewiring_rate", 0.0);
  a.rare_edge_rate = j.value("rare_edge_rate", 0.0);
  a.rare_edge_type = j.value("rare_edge_type", a.rare_edge_type);
  if (auto it = j.find("extra_motif"); it != j.end() && !it->is_null())
    a.extra_motif = it->get<Motif>();
}

inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = nlohmann::json{{"name", s.name},           {"node_types", s.node_types},
                     {"edge_types", s.edge_types}, {"motifs", s.motifs},
                     {"min_edges", s.min_edges},   {"max_edges", s.max_edges},
                     {"anomaly", s.anomaly},       {"label", to_string(s.label)},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  s = ScenarioSpec{};
  j.at("name").get_to(s.name);
  j.at("node_types").get_to(s.node_types);
  j.at("edge_types").get_to(s.edge_types);
  j.at("motifs").get_to(s.motifs);
  s.min_edges = j.value("min_edges", s.min_edges);
  s.max_edges = j.value("max_edges", s.max_edges);
  if (auto it = j.find("anomaly"); it != j.end()) s.anomaly = it->get<AnomalyKnobs>();
  auto label = parse_label(j.value("label", std::string("benign")));
  if (!label) throw ConfigError("scenario label must be benign, attack or unlabeled");
  s.label = *label;
  s.seed = j.value("seed", std::uint64_t{0});
}

namespace detail {

struct RawEdge {
  std::size_t src, dst;  // node ids in the generator's table
  std::string type;
};

class StreamBuilder {
 public:
  explicit StreamBuilder(std::mt19937_64& rng) : rng_(rng) {}

  std::vector<std::size_t> bind(const Motif& motif) {
    std::vector<std::size_t> bound;
    for (const auto& slot : motif.slots) {
      auto& pool = pools_[slot.type];
      std::bernoulli_distribution reuse(slot.reuse);
      if (!pool.empty() && reuse(rng_)) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        bound.push_back(pool[pick(rng_)]);
      } else {
        bound.push_back(types_.size());
        pool.push_back(types_.size());
        types_.push_back(slot.type);
      }
    }
    return bound;
  }

  std::vector<RawEdge> instantiate(const Motif& motif, bool repeats = true) {
    const auto slots = bind(motif);
    std::vector<RawEdge> out;
    for (const auto& e : motif.edges) {
      std::uniform_int_distribution<std::size_t> times(e.min_repeat, e.max_repeat);
      const std::size_t n = repeats ? times(rng_) : 1;
      for (std::size_t r = 0; r < n; ++r) out.push_back({slots[e.src], slots[e.dst], e.type});
    }
    return out;
  }

  std::size_t random_node_of(const std::string& type) {
    const auto& pool = pools_[type];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng_)];
  }

  const std::string& type_of(std::size_t node) const { return types_[node]; }

 private:
  std::mt19937_64& rng_;
  std::vector<std::string> types_;
  std::map<std::string, std::vector<std::size_t>> pools_;
};

}  // namespace detail

/// Number of extra-motif instances woven into a stream of `stream_edges`
/// edges: as many as fit in the configured edge fraction, at least one.
inline std::size_t extra_motif_instances(const AnomalyKnobs& knobs, std::size_t stream_edges) {
  if (!knobs.extra_motif) return 0;
  const auto per_instance = knobs.extra_motif->edges.size();
  const auto budget = static_cast<std::size_t>(
      knobs.extra_motif_edge_fraction * static_cast<double>(stream_edges));
  return std::max<std::size_t>(1, budget / per_instance);
}

/// One graph of the scenario; `index` selects the random stream.
inline ProvenanceGraph generate_one(const ScenarioSpec& spec, std::size_t index) {
  std::mt19937_64 rng(derive_seed(spec.seed, std::uint64_t{index}));
  detail::StreamBuilder builder(rng);
  std::uniform_int_distribution<std::size_t> size(spec.min_edges, spec.max_edges);
  const std::size_t target = size(rng);
  std::vector<double> weights;
  for (const auto& m : spec.motifs) weights.push_back(m.weight);
  std::discrete_distribution<std::size_t> pick_motif(weights.begin(), weights.end());

  std::vector<detail::RawEdge> stream;
  while (stream.size() < target) {
    auto edges = builder.instantiate(spec.motifs[pick_motif(rng)]);
    stream.insert(stream.end(), edges.begin(), edges.end());
  }

  std::bernoulli_distribution rewire(spec.anomaly.rewiring_rate);
  std::bernoulli_distribution rare(spec.anomaly.rare_edge_rate);
  for (auto& e : stream) {
    if (spec.anomaly.rewiring_rate > 0 && rewire(rng))
      e.dst = builder.random_node_of(builder.type_of(e.dst));
    if (spec.anomaly.rare_edge_rate > 0 && rare(rng)) e.type = spec.anomaly.rare_edge_type;
  }

  const std::size_t instances = extra_motif_instances(spec.anomaly, stream.size());
  for (std::size_t k = 0; k < instances; ++k) {
    auto edges = builder.instantiate(*spec.anomaly.extra_motif, /*repeats=*/false);
    std::uniform_int_distribution<std::size_t> where(0, stream.size());
    std::vector<std::size_t> at(edges.size());
    for (auto& p : at) p = where(rng);
    std::sort(at.begin(), at.end());
    // Insert back to front so earlier positions stay valid; equal positions
    // keep the motif's own edge order.
    for (std::size_t i = edges.size(); i-- > 0;)
      stream.insert(stream.begin() + static_cast<std::ptrdiff_t>(at[i]), edges[i]);
  }

  char id[64];
  std::snprintf(id, sizeof id, "%s-%03zu", spec.name.c_str(), index);
  ProvenanceGraph g(id, spec.label);
  for (const auto& e : stream) {
    EdgeRecord rec;
    rec.src = g.add_node("n" + std::to_string(e.src), builder.type_of(e.src));
    rec.dst = g.add_node("n" + std::to_string(e.dst), builder.type_of(e.dst));
    rec.type = e.type;
    rec.seq = rec.first_seq = g.next_seq();
    g.add_edge(std::move(rec));
  }
  return g;
}

/// `count` graphs, deterministic for the spec's seed.
inline std::vector<ProvenanceGraph> generate(const ScenarioSpec& spec, std::size_t count) {
  spec.validate();
  std::vector<ProvenanceGraph> graphs;
  graphs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) graphs.push_back(generate_one(spec, i));
  return graphs;
}

/// Three benign activity families (browse, build, admin) over processes (P),
/// files (F) and sockets (S).
inline ScenarioSpec benign_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.name = "benign";
  s.node_types = {"P", "F", "S"};
  s.edge_types = {"fork", "read", "write", "connect", "send", "recv", "load"};
  s.motifs = {
      {"browse", 3,
       {{"P", 0.95}, {"S", 0.3}, {"F", 0.6}},
       {{0, 1, "connect", 1, 1}, {1, 0, "recv", 1, 4}, {0, 2, "write", 1, 3}}},
      {"build", 2,
       {{"P", 0.9}, {"P", 0.0}, {"F", 0.7}, {"F", 0.0}},
       {{0, 1, "fork", 1, 1}, {2, 1, "read", 1, 5}, {1, 3, "write", 1, 2}}},
      {"admin", 2,
       {{"P", 0.9}, {"F", 0.8}, {"F", 0.8}, {"S", 0.8}},
       {{1, 0, "read", 1, 2}, {0, 2, "write", 1, 4}, {0, 3, "send", 1, 2}}},
  };
  s.min_edges = 400;
  s.max_edges = 800;
  s.label = Label::benign;
  s.seed = seed;
  return s;
}

/// Remote payload drop: a socket feeds an existing process, which writes a
/// file that is loaded into a new process calling out to a new socket.
inline Motif infiltration_motif() {
  return {"infiltration",
          1,
          {{"S", 0.0}, {"P", 1.0}, {"F", 0.0}, {"P", 0.0}, {"S", 0.0}},
          {{0, 1, "recv", 1, 1},
           {1, 2, "write", 1, 1},
           {2, 3, "load", 1, 1},
           {3, 4, "connect", 1, 1},
           {4, 3, "recv", 1, 1}}};
}

inline ScenarioSpec attack_scenario(std::uint64_t seed) {
  ScenarioSpec s = benign_scenario(seed);
  s.name = "attack";
  s.label = Label::attack;
  s.anomaly.extra_motif = infiltration_motif();
  s.anomaly.extra_motif_edge_fraction = 0.05;
  return s;
}

/// 120 benign graphs followed by 30 attack graphs.
inline std::vector<ProvenanceGraph> default_benchmark(std::uint64_t seed) {
  auto graphs = generate(benign_scenario(derive_seed(seed, "benign")), 120);
  auto attacks = generate(attack_scenario(derive_seed(seed, "attack")), 30);
  graphs.insert(graphs.end(), std::make_move_iterator(attacks.begin()),
                std::make_move_iterator(attacks.end()));
  return graphs;
}

}  // namespace provtrace::synth
