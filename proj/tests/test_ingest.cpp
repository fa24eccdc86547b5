#include <gtest/gtest.h>

#include <deque>
#include <random>
#include <sstream>

#include "provtrace/ingest.hpp"
#include "support/oracles.hpp"

using namespace provtrace;

namespace {

template <class E, class F>
std::size_t error_line(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.line();
  }
  ADD_FAILURE() << "expected exception";
  return 0;
}

// Kahn's algorithm: acyclic iff every node can be removed in topological order.
bool kahn_acyclic(const ProvenanceGraph& g) {
  std::vector<std::size_t> indegree(g.node_count(), 0);
  std::vector<std::vector<NodeIndex>> succ(g.node_count());
  for (const auto& e : g.edges()) {
    succ[e.src].push_back(e.dst);
    ++indegree[e.dst];
  }
  std::deque<NodeIndex> ready;
  for (NodeIndex i = 0; i < g.node_count(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::size_t removed = 0;
  while (!ready.empty()) {
    const auto n = ready.front();
    ready.pop_front();
    ++removed;
    for (auto s : succ[n])
      if (--indegree[s] == 0) ready.push_back(s);
  }
  return removed == g.node_count();
}

ProvenanceGraph chain(std::initializer_list<std::pair<const char*, const char*>> edges) {
  ProvenanceGraph g("c");
  for (const auto& [a, b] : edges) {
    EdgeRecord e;
    e.src = g.add_node(a, "P");
    e.dst = g.add_node(b, "P");
    e.type = "x";
    e.seq = e.first_seq = g.next_seq();
    g.add_edge(e);
  }
  return g;
}

}  // namespace

TEST(StreamSpot, ParsesTwoEdgeGraph) {
  const auto graphs = parse_streamspot("a\tP\tb\tF\tW\t0\na\tP\tc\tF\tR\t0\n");
  ASSERT_EQ(graphs.size(), 1u);
  const auto& g = graphs[0];
  EXPECT_EQ(g.id(), "0");
  EXPECT_EQ(g.label(), Label::unlabeled);
  ASSERT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.node(0), (NodeRecord{"a", "P"}));
  EXPECT_EQ(g.node(1), (NodeRecord{"b", "F"}));
  EXPECT_EQ(g.node(2), (NodeRecord{"c", "F"}));
  ASSERT_EQ(g.edge_count(), 2u);
  EXPECT_EQ(g.edges()[0].seq, 0u);
  EXPECT_EQ(g.edges()[1].seq, 1u);
  EXPECT_EQ(g.edges()[1].type, "R");
}

TEST(StreamSpot, EmptyInputGivesNoGraphs) { EXPECT_TRUE(parse_streamspot("").empty()); }

TEST(StreamSpot, NodeIdsArePerGraph) {
  const auto graphs = parse_streamspot("1\tP\t2\tF\tW\t0\n1\tF\t2\tP\tR\t1\n\n1\tP\t3\tF\tW\t0\r\n");
  ASSERT_EQ(graphs.size(), 2u);
  EXPECT_EQ(graphs[0].edge_count(), 2u);
  EXPECT_EQ(graphs[0].edges()[1].seq, 1u);
  EXPECT_EQ(graphs[1].node(0).type, "F");
}

TEST(StreamSpot, WrongFieldCountReportsLine) {
  EXPECT_EQ(error_line<ParseError>([] { parse_streamspot("a\tP\tb\tF\tW\t0\na\tP\tb\tF\tW\n"); }), 2u);
}

TEST(StreamSpot, RetypedNodeIsIntegrityError) {
  EXPECT_EQ(error_line<IntegrityError>([] { parse_streamspot("a\tP\tb\tF\tW\t0\n\na\tF\tc\tF\tR\t0\n"); }), 3u);
}

TEST(Jsonl, ParsesMinimalLine) {
  const auto graphs = parse_jsonl(
      R"({"graph_id":"g","src":"a","src_type":"process","dst":"b","dst_type":"file","edge_type":"write"})");
  ASSERT_EQ(graphs.size(), 1u);
  EXPECT_EQ(graphs[0].node_count(), 2u);
  EXPECT_EQ(graphs[0].edge_count(), 1u);
  EXPECT_FALSE(graphs[0].edges()[0].timestamp.has_value());
}

TEST(Jsonl, TimestampAndLabel) {
  const auto graphs = parse_jsonl(
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w","ts":42,"label":"attack"})");
  EXPECT_EQ(graphs[0].edges()[0].timestamp, 42);
  EXPECT_EQ(graphs[0].label(), Label::attack);
}

TEST(Jsonl, InvalidJsonReportsLine) {
  const std::string text =
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w"})"
      "\n{not json}\n";
  EXPECT_EQ(error_line<ParseError>([&] { parse_jsonl(text); }), 2u);
}

TEST(Jsonl, MissingKeyIsSchemaError) {
  EXPECT_EQ(error_line<SchemaError>([] { parse_jsonl(R"({"graph_id":"g","src":"a","src_type":"P","dst":"b"})"); }),
            1u);
  EXPECT_THROW(parse_jsonl(R"({"graph_id":"g","src":1,"src_type":"P","dst":"b","dst_type":"F","edge_type":"w"})"),
               SchemaError);
  EXPECT_THROW(parse_jsonl(R"([1,2])"), SchemaError);
}

TEST(Jsonl, ConflictingLabelsAreRejected) {
  const std::string text =
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w","label":"benign"})"
      "\n"
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w","label":"attack"})";
  EXPECT_THROW(parse_jsonl(text), IntegrityError);
}

TEST(Jsonl, OutOfOrderSeqIsRejected) {
  const std::string text =
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w","seq":5})"
      "\n"
      R"({"graph_id":"g","src":"a","src_type":"P","dst":"b","dst_type":"F","edge_type":"w","seq":5})";
  EXPECT_THROW(parse_jsonl(text), IntegrityError);
}

TEST(Jsonl, TenThousandLinesRoundTrip) {
  std::mt19937_64 rng(11);
  std::vector<ProvenanceGraph> graphs;
  std::size_t lines = 0;
  std::uniform_int_distribution<std::int64_t> ts(-1'000'000, 1'000'000'000);
  std::bernoulli_distribution stamped(0.5);
  const Label labels[] = {Label::benign, Label::attack, Label::unlabeled};
  while (lines < 10'000) {
    auto g = oracles::random_multigraph(rng, 30, "graph " + std::to_string(graphs.size()));
    if (g.edge_count() == 0) continue;
    ProvenanceGraph h = g.without_edges();
    h.set_label(labels[graphs.size() % 3]);
    for (auto e : g.edges()) {
      if (stamped(rng)) e.timestamp = ts(rng);
      if (lines + h.edge_count() >= 10'000) break;
      h.add_edge(e);
    }
    lines += h.edge_count();
    graphs.push_back(std::move(h));
  }
  // Nodes that never appear on an edge are not representable in the format.
  for (auto& g : graphs) g = parse_jsonl(emit_jsonl({g})).front();

  const auto text = emit_jsonl(graphs);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 10'000);
  const auto parsed = parse_jsonl(text);
  ASSERT_EQ(parsed.size(), graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) EXPECT_EQ(parsed[i], graphs[i]) << graphs[i].id();
  EXPECT_EQ(emit_jsonl(parsed), text);
}

TEST(Jsonl, ReducedFieldsRoundTrip) {
  std::mt19937_64 rng(3);
  std::vector<ProvenanceGraph> graphs;
  while (graphs.size() < 20) {
    auto g = cpr_reduce(oracles::random_multigraph(rng, 12, "r" + std::to_string(graphs.size())));
    if (g.edge_count() > 0) graphs.push_back(std::move(g));
  }
  for (auto& g : graphs) g = parse_jsonl(emit_jsonl({g}, {.reduction_fields = true})).front();
  const auto text = emit_jsonl(graphs, {.reduction_fields = true});
  EXPECT_EQ(parse_jsonl(text), graphs);
}

TEST(Ingest, ParsingIsDeterministic) {
  const std::string text = "a\tP\tb\tF\tW\t0\nb\tF\tc\tP\tR\t0\nx\tP\ty\tS\tC\t7\n";
  EXPECT_EQ(parse_streamspot(text), parse_streamspot(text));
}

TEST(Stats, Chain) {
  const auto s = graph_stats(chain({{"a", "b"}, {"b", "c"}}));
  EXPECT_EQ(s.nodes, 3u);
  EXPECT_EQ(s.edges, 2u);
  EXPECT_TRUE(s.acyclic);
  EXPECT_EQ(s.max_out_degree, 1u);
  EXPECT_EQ(s.node_types.at("P"), 3u);
}

TEST(Stats, TwoCycleAndSelfLoop) {
  EXPECT_FALSE(graph_stats(chain({{"a", "b"}, {"b", "a"}})).acyclic);
  const auto loop = graph_stats(chain({{"a", "a"}}));
  EXPECT_FALSE(loop.acyclic);
  EXPECT_EQ(loop.self_loops, 1u);
}

TEST(Stats, HistogramsSumToCounts) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto g = oracles::random_multigraph(rng);
    const auto s = graph_stats(g);
    std::size_t nodes = 0, edges = 0;
    for (const auto& [t, n] : s.node_types) nodes += n;
    for (const auto& [t, n] : s.edge_types) edges += n;
    EXPECT_EQ(nodes, g.node_count());
    EXPECT_EQ(edges, g.edge_count());
  }
}

TEST(Stats, JsonKeys) {
  const auto j = nlohmann::json(graph_stats(chain({{"a", "b"}})));
  for (const char* key : {"nodes", "edges", "node_types", "edge_types", "max_out_degree", "acyclic"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Stats, AcyclicityAgreesWithKahn) {
  std::mt19937_64 rng(17);
  std::size_t cyclic = 0;
  for (int trial = 0; trial < 300; ++trial) {
    ProvenanceGraph g("dag");
    constexpr NodeIndex n = 30;
    for (NodeIndex i = 0; i < n; ++i) g.add_node("v" + std::to_string(i), "P");
    std::uniform_int_distribution<NodeIndex> node(0, n - 1);
    std::bernoulli_distribution back_edge(trial % 2 ? 0.02 : 0.0);
    for (std::uint64_t s = 0; s < 60; ++s) {
      auto a = node(rng), b = node(rng);
      if (a == b) continue;
      // Forward edges only, unless a back edge is drawn.
      if ((a > b) != back_edge(rng)) std::swap(a, b);
      g.add_edge({.src = a, .dst = b, .type = "e", .seq = s, .first_seq = s});
    }
    const bool oracle = kahn_acyclic(g);
    cyclic += !oracle;
    EXPECT_EQ(is_acyclic(g), oracle) << "trial " << trial;
  }
  EXPECT_GT(cyclic, 10u);
}
