#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "provtrace/embed/walks.hpp"
#include "provtrace/error.hpp"
#include "provtrace/linalg.hpp"

namespace provtrace::embed {

/// Token -> row index. The unknown-token entry is always the last index.
class Vocabulary {
 public:
  static constexpr std::string_view unk_token = "<unk>";

  Vocabulary() { add(std::string(unk_token)); }

  /// Builds from tokens in the given order, appending UNK.
  explicit Vocabulary(std::vector<std::string> tokens) {
    for (auto& t : tokens) add(std::move(t));
    add(std::string(unk_token));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  std::uint32_t unk() const noexcept {
    return static_cast<std::uint32_t>(tokens_.size() - 1);
  }
  const std::string& token(std::uint32_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) != 0;
  }

  std::uint32_t index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk() : it->second;
  }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  void add(std::string token) {
    if (index_.count(token)) throw ContractError("duplicate vocabulary token");
    index_.emplace(token, static_cast<std::uint32_t>(tokens_.size()));
    tokens_.push_back(std::move(token));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Tokens seen at least min_count times, most frequent first (ties by token
/// text), followed by UNK.
inline Vocabulary build_vocab(const WalkCorpus& corpus,
                              std::size_t min_count = 1) {
  std::map<std::string, std::size_t> counts;
  for (const auto& walk : corpus.walks)
    for (const auto& t : walk) ++counts[t];
  counts.erase(std::string(Vocabulary::unk_token));
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, n] : counts)
    if (n >= min_count) kept.emplace_back(token, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  std::vector<std::string> tokens;
  for (auto& [token, n] : kept) tokens.push_back(token);
  return Vocabulary(std::move(tokens));
}

/// (target, context) pairs of a sliding window: for every position t and
/// every offset j in [-window, window] \ {0} that stays inside the walk.
template <class T>
std::vector<std::pair<T, T>> skipgram_pairs(std::span<const T> walk,
                                            std::size_t window) {
  std::vector<std::pair<T, T>> pairs;
  const auto n = static_cast<std::ptrdiff_t>(walk.size());
  const auto c = static_cast<std::ptrdiff_t>(window);
  for (std::ptrdiff_t t = 0; t < n; ++t)
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, t - c);
         j <= std::min(n - 1, t + c); ++j)
      if (j != t) pairs.emplace_back(walk[t], walk[j]);
  return pairs;
}

template <class T>
std::vector<std::pair<T, T>> skipgram_pairs(const std::vector<T>& walk,
                                            std::size_t window) {
  return skipgram_pairs(std::span<const T>(walk), window);
}

struct SkipGramConfig {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  std::size_t min_count = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 2) throw ConfigError("skip-gram dim must be >= 2");
    if (window < 1) throw ConfigError("skip-gram window must be >= 1");
    if (negatives < 1) throw ConfigError("skip-gram negatives must be >= 1");
    if (epochs < 1) throw ConfigError("skip-gram epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("skip-gram lr must be > 0");
  }
};

/// Input (word) and output (context) vectors, one row per vocabulary entry.
struct EmbeddingTable {
  static constexpr int format_version = 1;

  Vocabulary vocab;
  MatrixD input;
  MatrixD output;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(input.cols()); }

  auto vector(std::string_view token) const {
    return input.row(vocab.index_of(token));
  }

  bool finite() const { return input.allFinite() && output.allFinite(); }

  bool operator==(const EmbeddingTable& other) const {
    return vocab == other.vocab && input == other.input && output == other.output;
  }
};

inline void to_json(nlohmann::json& j, const EmbeddingTable& t) {
  auto flat = [](const MatrixD& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  j = nlohmann::json{{"format_version", EmbeddingTable::format_version},
                     {"W", t.vocab.size()},
                     {"m", t.dim()},
                     {"vocab", t.vocab.tokens()},
                     {"input", flat(t.input)},
                     {"output", flat(t.output)}};
}

inline void from_json(const nlohmann::json& j, EmbeddingTable& t) {
  if (j.at("format_version").get<int>() != EmbeddingTable::format_version)
    throw SchemaError(0, "unsupported embedding table version");
  const auto W = j.at("W").get<std::size_t>();
  const auto m = j.at("m").get<std::size_t>();
  auto tokens = j.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() != W || tokens.empty() ||
      tokens.back() != Vocabulary::unk_token)
    throw SchemaError(0, "embedding vocabulary malformed");
  tokens.pop_back();
  t.vocab = Vocabulary(std::move(tokens));
  auto load = [&](const char* key, MatrixD& out) {
    const auto flat = j.at(key).get<std::vector<double>>();
    if (flat.size() != W * m) throw SchemaError(0, "embedding matrix size mismatch");
    out = Eigen::Map<const MatrixD>(flat.data(), static_cast<Eigen::Index>(W),
                                    static_cast<Eigen::Index>(m));
  };
  load("input", t.input);
  load("output", t.output);
}

namespace detail {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

/// Negative-sampling loss for one (target, context) pair:
///   -log s(o_c . v_t) - sum_n log s(-o_n . v_t)
/// where v are input rows, o output rows and s the logistic function.
inline double negative_sampling_loss(const EmbeddingTable& t,
                                     std::uint32_t target,
                                     std::uint32_t context,
                                     std::span<const std::uint32_t> negatives) {
  const auto v = t.input.row(target);
  double loss = -std::log(detail::sigmoid(t.output.row(context).dot(v)));
  for (auto n : negatives) loss -= std::log(detail::sigmoid(-t.output.row(n).dot(v)));
  return loss;
}

/// Gradient of negative_sampling_loss, accumulated into grad_input and
/// grad_output (same shapes as the table).
inline void negative_sampling_gradient(const EmbeddingTable& t,
                                       std::uint32_t target,
                                       std::uint32_t context,
                                       std::span<const std::uint32_t> negatives,
                                       MatrixD& grad_input,
                                       MatrixD& grad_output) {
  const auto v = t.input.row(target);
  auto accumulate = [&](std::uint32_t word, double label) {
    const auto o = t.output.row(word);
    const double g = detail::sigmoid(o.dot(v)) - label;
    grad_input.row(target) += g * o;
    grad_output.row(word) += g * v;
  };
  accumulate(context, 1.0);
  for (auto n : negatives) accumulate(n, 0.0);
}

/// One gradient step on a single pair. Every term of the gradient is taken at
/// the current parameters before any row is updated.
inline void sgd_step(EmbeddingTable& t, std::uint32_t target,
                     std::uint32_t context,
                     std::span<const std::uint32_t> negatives, double lr) {
  const RowVectorD v = t.input.row(target);
  RowVectorD grad_v = RowVectorD::Zero(v.size());
  // (word, dloss/dlogit) with every logit taken before any update.
  std::vector<std::pair<std::uint32_t, double>> terms;
  terms.reserve(negatives.size() + 1);
  terms.emplace_back(context, detail::sigmoid(t.output.row(context).dot(v)) - 1.0);
  for (auto n : negatives)
    terms.emplace_back(n, detail::sigmoid(t.output.row(n).dot(v)));
  for (auto [word, g] : terms) grad_v += g * t.output.row(word);
  for (auto [word, g] : terms) t.output.row(word) -= lr * g * v;
  t.input.row(target) -= lr * grad_v;
}

/// Full-softmax skip-gram objective: the mean over positions t of
///   sum_{j in window} log softmax(O v_{w_t})[w_{t+j}]
/// summed over all walks, divided by the total number of positions T.
inline double skipgram_objective(
    const EmbeddingTable& t,
    const std::vector<std::vector<std::uint32_t>>& walks, std::size_t window) {
  const MatrixD logits_all = t.input * t.output.transpose();  // W x W
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto& walk : walks) {
    positions += walk.size();
    for (auto [target, context] : skipgram_pairs(walk, window)) {
      const auto row = logits_all.row(target);
      const double peak = row.maxCoeff();
      const double log_z = peak + std::log((row.array() - peak).exp().sum());
      total += row(context) - log_z;
    }
  }
  return positions ? total / static_cast<double>(positions) : 0.0;
}

/// Encodes a corpus against a vocabulary.
inline std::vector<std::vector<std::uint32_t>> encode(const WalkCorpus& corpus,
                                                      const Vocabulary& vocab) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(corpus.walks.size());
  for (const auto& walk : corpus.walks) {
    std::vector<std::uint32_t> ids;
    ids.reserve(walk.size());
    for (const auto& token : walk) ids.push_back(vocab.index_of(token));
    out.push_back(std::move(ids));
  }
  return out;
}

/// Randomly initialized table in the word2vec convention: input rows uniform
/// in [-0.5/m, 0.5/m], output rows zero.
inline EmbeddingTable init_table(Vocabulary vocab, std::size_t dim,
                                 std::uint64_t seed) {
  EmbeddingTable t;
  t.vocab = std::move(vocab);
  const auto W = static_cast<Eigen::Index>(t.vocab.size());
  const auto m = static_cast<Eigen::Index>(dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5 / static_cast<double>(dim),
                                           0.5 / static_cast<double>(dim));
  t.input.resize(W, m);
  for (Eigen::Index i = 0; i < t.input.size(); ++i) t.input.data()[i] = u(rng);
  t.output = MatrixD::Zero(W, m);
  return t;
}

/// Trains skip-gram with negative sampling by plain SGD, single-threaded and
/// deterministic for a fixed seed. Negatives are drawn from the unigram
/// distribution raised to 0.75; a draw equal to the context word is skipped.
/// The learning rate decays linearly from lr to lr / 100 over all epochs.
inline EmbeddingTable train_skipgram(const WalkCorpus& corpus,
                                     const SkipGramConfig& config) {
  config.validate();
  if (corpus.token_count() == 0)
    throw ContractError("skip-gram training needs a non-empty corpus");

  auto vocab = build_vocab(corpus, config.min_count);
  const auto walks = encode(corpus, vocab);
  std::vector<double> weights(vocab.size(), 0.0);
  {
    std::vector<std::size_t> counts(vocab.size(), 0);
    for (const auto& w : walks)
      for (auto id : w) ++counts[id];
    for (std::size_t i = 0; i < counts.size(); ++i)
      weights[i] = std::pow(static_cast<double>(counts[i]), 0.75);
  }
  EmbeddingTable t = init_table(std::move(vocab), config.dim,
                                derive_seed(config.seed, "skipgram-init"));

  std::mt19937_64 rng(derive_seed(config.seed, "skipgram-negatives"));
  std::discrete_distribution<std::uint32_t> noise(weights.begin(), weights.end());

  std::size_t total_positions = 0;
  for (const auto& w : walks) total_positions += w.size();
  const double total_steps =
      static_cast<double>(total_positions) * static_cast<double>(config.epochs);
  std::size_t step = 0;

  std::vector<std::uint32_t> negatives;
  negatives.reserve(config.negatives);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& walk : walks) {
      for (std::size_t pos = 0; pos < walk.size(); ++pos, ++step) {
        const double progress = static_cast<double>(step) / total_steps;
        const double lr = config.lr * (1.0 - 0.99 * progress);
        const std::size_t lo = pos >= config.window ? pos - config.window : 0;
        const std::size_t hi = std::min(walk.size() - 1, pos + config.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == pos) continue;
          negatives.clear();
          for (std::size_t k = 0; k < config.negatives; ++k) {
            const auto n = noise(rng);
            if (n != walk[j]) negatives.push_back(n);
          }
          sgd_step(t, walk[pos], walk[j], negatives, lr);
        }
      }
      if (!walk.empty() && !t.input.row(walk.front()).allFinite())
        throw DivergenceError("skip-gram produced non-finite embeddings; "
                              "lower the learning rate");
    }
  }
  if (!t.finite())
    throw DivergenceError("skip-gram produced non-finite embeddings");
  return t;
}

}  // namespace provtrace::embed
