#include <gtest/gtest.h>

#include "provtrace/embed/skipgram.hpp"
#include "support/oracles.hpp"

using namespace provtrace;
using embed::Vocabulary;
using embed::WalkCorpus;

TEST(Pairs, WindowOfOne) {
  const std::vector<std::string> walk{"a", "b", "c"};
  using P = std::pair<std::string, std::string>;
  EXPECT_EQ(embed::skipgram_pairs(walk, 1), (std::vector<P>{{"a", "b"}, {"b", "a"}, {"b", "c"}, {"c", "b"}}));
  EXPECT_TRUE(embed::skipgram_pairs(std::vector<std::string>{"a"}, 4).empty());
}

TEST(Pairs, MatchDoubleLoopOracle) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> token(0, 6);
  for (std::size_t len : {1, 2, 7, 20, 33})
    for (std::size_t window : {1, 2, 5, 40}) {
      std::vector<int> walk(len);
      for (auto& t : walk) t = token(rng);
      std::vector<std::pair<int, int>> expected;
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t j = 0; j < len; ++j) {
          const auto offset = t > j ? t - j : j - t;
          if (offset >= 1 && offset <= window) expected.emplace_back(walk[t], walk[j]);
        }
      EXPECT_EQ(embed::skipgram_pairs(walk, window), expected) << len << "/" << window;
    }
}

TEST(Pairs, SymmetricInCount) {
  const std::vector<int> walk{1, 2, 3, 4, 5, 6};
  std::map<std::pair<int, int>, int> n;
  for (auto p : embed::skipgram_pairs(walk, 2)) ++n[p];
  for (auto [p, c] : n) EXPECT_EQ(c, (n[{p.second, p.first}]));
}

TEST(Vocab, UnknownIsLast) {
  const auto v = embed::build_vocab(WalkCorpus{{{"P", "F", "P"}, {"F", "P"}}});
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"P", "F", "<unk>"}));
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.index_of("S"), v.unk());
  EXPECT_EQ(v.index_of("F"), 1u);
}

TEST(Vocab, MinCountMapsRareToUnknown) {
  const auto v = embed::build_vocab(WalkCorpus{{{"P", "F", "P", "S"}}}, 2);
  EXPECT_FALSE(v.contains("F"));
  EXPECT_EQ(v.index_of("F"), v.unk());
  EXPECT_EQ(v.index_of("P"), 0u);
}

TEST(Vocab, TiesBrokenByText) {
  const WalkCorpus corpus{{{"b", "a", "c", "a", "b"}}};
  EXPECT_EQ(embed::build_vocab(corpus).tokens(), (std::vector<std::string>{"a", "b", "c", "<unk>"}));
  EXPECT_EQ(embed::build_vocab(corpus), embed::build_vocab(corpus));
}

TEST(Vocab, DuplicateTokenRejected) { EXPECT_THROW(Vocabulary({"a", "a"}), ContractError); }

TEST(Objective, SinglePairByHand) {
  // W = 3, m = 1: input row of word 0 is 1, output rows 0, 1, 2 are 0, 1, 2.
  embed::EmbeddingTable t;
  t.vocab = Vocabulary({"a", "b"});
  t.input = MatrixD::Zero(3, 1);
  t.input(0, 0) = 1;
  t.output.resize(3, 1);
  t.output << 0, 1, 2;
  // Walk [a, b] with window 1: pairs (a, b) and (b, a); b's input is 0 so its
  // softmax is uniform.
  const double expected = ((1 - std::log(1 + std::exp(1.0) + std::exp(2.0))) + std::log(1.0 / 3)) / 2;
  EXPECT_NEAR(embed::skipgram_objective(t, {{0, 1}}, 1), expected, 1e-12);
}

TEST(Objective, FullSoftmaxMatchesLoopOracle) {
  const auto o = oracles::check_softmax_objective(99);
  EXPECT_TRUE(o.pass) << o.detail;
}

TEST(Gradient, NegativeSamplingMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto o = oracles::check_negative_sampling_gradient(seed);
    EXPECT_TRUE(o.pass) << o.detail;
  }
}

TEST(Gradient, SgdStepUsesPreUpdateGradient) {
  auto t = oracles::random_table(5, 4, 8);
  const std::vector<std::uint32_t> negatives{0, 2, 2};
  MatrixD gi = MatrixD::Zero(5, 4), go = gi;
  embed::negative_sampling_gradient(t, 1, 3, negatives, gi, go);
  const MatrixD in = t.input - 0.1 * gi, out = t.output - 0.1 * go;
  embed::sgd_step(t, 1, 3, negatives, 0.1);
  EXPECT_LT((t.input - in).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((t.output - out).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Training, CommunitiesSeparate) {
  const auto o = oracles::check_community_separation(21);
  EXPECT_TRUE(o.pass) << o.detail;
}

TEST(Training, DeterministicAndFinite) {
  std::mt19937_64 rng(6);
  const auto g = oracles::random_multigraph(rng, 30);
  const auto corpus = embed::generate_walks(g, {}, embed::TokenMode::contextual);
  embed::SkipGramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 2;
  cfg.seed = 4;
  const auto a = embed::train_skipgram(corpus, cfg), b = embed::train_skipgram(corpus, cfg);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.finite());
  EXPECT_EQ(a.vocab.token(a.vocab.unk()), "<unk>");
}

TEST(Training, EmptyCorpusIsRejected) {
  EXPECT_THROW(embed::train_skipgram(WalkCorpus{}, {}), ContractError);
}

TEST(Training, ConfigValidation) {
  embed::SkipGramConfig c;
  c.dim = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.window = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.negatives = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Table, JsonRoundTrip) {
  const auto t = oracles::random_table(4, 3, 5);
  const auto j = nlohmann::json(t);
  EXPECT_EQ(j.at("format_version"), embed::EmbeddingTable::format_version);
  EXPECT_EQ(j.get<embed::EmbeddingTable>(), t);
}
