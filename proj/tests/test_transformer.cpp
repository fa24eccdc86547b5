#include <gtest/gtest.h>

#include <sstream>

#include "provtrace/nn/checkpoint.hpp"
#include "provtrace/nn/trainer.hpp"
#include "support/oracles.hpp"

using namespace provtrace;
using nn::ModelConfig;
using nn::ModelParams;

namespace {

// Plain-loop transformer, written without Eigen expressions.
namespace loops {

using Grid = std::vector<std::vector<double>>;

Grid from(const MatrixD& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

Grid mul(const Grid& a, const MatrixD& b) {
  Grid out(a.size(), std::vector<double>(static_cast<std::size_t>(b.cols()), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a[i].size(); ++k) out[i][j] += a[i][k] * b(static_cast<Eigen::Index>(k), j);
  return out;
}

Grid add_row(Grid a, const RowVectorD& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b(static_cast<Eigen::Index>(j));
  return a;
}

Grid add(Grid a, const Grid& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Grid norm(const Grid& x, const nn::LayerNormParams<double>& p) {
  Grid out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i].size());
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v / d;
    for (double v : x[i]) var += (v - mean) * (v - mean) / d;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * p.gain(j) + p.bias(j);
  }
  return out;
}

Grid ffn(const Grid& x, const nn::FeedForwardParams<double>& p) {
  Grid h = add_row(mul(x, p.w1), p.b1);
  for (auto& row : h)
    for (double& v : row) v = std::max(v, 0.0);
  return add_row(mul(h, p.w2), p.b2);
}

// see(i, j): may query i attend to key j.
template <class See>
Grid mha(const Grid& xq, const Grid& xkv, const nn::MultiHeadParams<double>& p, std::size_t heads, See see) {
  const Grid q = mul(xq, p.wq), k = mul(xkv, p.wk), v = mul(xkv, p.wv);
  const std::size_t width = q[0].size(), dk = width / heads;
  Grid concat(xq.size(), std::vector<double>(width, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < xq.size(); ++i) {
      std::vector<double> w(xkv.size(), 0.0);
      double peak = -1e300, z = 0;
      for (std::size_t j = 0; j < xkv.size(); ++j) {
        if (!see(i, j)) continue;
        for (std::size_t c = h * dk; c < (h + 1) * dk; ++c) w[j] += q[i][c] * k[j][c];
        w[j] /= std::sqrt(static_cast<double>(dk));
        peak = std::max(peak, w[j]);
      }
      for (std::size_t j = 0; j < xkv.size(); ++j) z += see(i, j) ? std::exp(w[j] - peak) : 0.0;
      for (std::size_t j = 0; j < xkv.size(); ++j)
        if (see(i, j))
          for (std::size_t c = h * dk; c < (h + 1) * dk; ++c) concat[i][c] += std::exp(w[j] - peak) / z * v[j][c];
    }
  return mul(concat, p.wo);
}

Grid embed(const ModelParams<double>& p, const Grid& x) {
  Grid e = add_row(mul(x, p.in_w), p.in_b);
  const double d = static_cast<double>(p.in_w.cols());
  for (std::size_t pos = 0; pos < e.size(); ++pos)
    for (std::size_t c = 0; c < e[pos].size(); ++c) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(c - c % 2) / d);
      e[pos][c] += c % 2 ? std::cos(angle) : std::sin(angle);
    }
  return e;
}

Grid reconstruct(const ModelParams<double>& p, const ModelConfig& cfg, const MatrixD& x,
                 const std::vector<bool>& valid) {
  Grid h = embed(p, from(x));
  auto pad = [&](std::size_t, std::size_t j) { return static_cast<bool>(valid[j]); };
  auto causal = [&](std::size_t i, std::size_t j) { return j <= i && valid[j]; };
  for (const auto& l : p.encoder) {
    h = norm(add(h, mha(h, h, l.self_attn, cfg.heads, pad)), l.norm1);
    h = norm(add(h, ffn(h, l.ffn)), l.norm2);
  }
  const Grid memory = h;
  Grid y_in = from(x);
  for (std::size_t i = y_in.size(); i-- > 1;) y_in[i] = y_in[i - 1];
  for (std::size_t c = 0; c < y_in[0].size(); ++c) y_in[0][c] = p.start(static_cast<Eigen::Index>(c));
  Grid y = embed(p, y_in);
  for (const auto& l : p.decoder) {
    y = norm(add(y, mha(y, y, l.self_attn, cfg.heads, causal)), l.norm1);
    y = norm(add(y, mha(y, memory, l.cross_attn, cfg.heads, pad)), l.norm2);
    y = norm(add(y, ffn(y, l.ffn)), l.norm3);
  }
  return add_row(mul(y, p.out_w), p.out_b);
}

}  // namespace loops

ModelParams<double> random_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = ModelParams<double>::init(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.4);
  for (auto& t : p.tensors())
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data[k] += nd(rng);
  return p;
}

embed::FeatureSequence random_sequence(std::mt19937_64& rng, const ModelConfig& cfg, std::string id) {
  std::uniform_int_distribution<std::size_t> len(1, cfg.n_max);
  embed::FeatureSequence s;
  s.graph_id = std::move(id);
  s.label = Label::benign;
  s.X = MatrixD::Zero(static_cast<Eigen::Index>(cfg.n_max), static_cast<Eigen::Index>(cfg.input_dim));
  s.mask.assign(cfg.n_max, false);
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    s.mask[i] = true;
    auto row = s.X.row(static_cast<Eigen::Index>(i));
    oracles::fill_normal(row, rng);
    row.normalize();
  }
  return s;
}

// Sequences drawn from a few repeating row patterns, so there is structure to learn.
std::vector<embed::FeatureSequence> patterned_sequences(const ModelConfig& cfg, std::size_t count,
                                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatrixD patterns(3, static_cast<Eigen::Index>(cfg.input_dim));
  oracles::fill_normal(patterns, rng);
  patterns.rowwise().normalize();
  std::uniform_int_distribution<int> pick(0, 2);
  std::vector<embed::FeatureSequence> out;
  for (std::size_t s = 0; s < count; ++s) {
    auto seq = random_sequence(rng, cfg, "s" + std::to_string(s));
    const int a = pick(rng), b = pick(rng);
    for (Eigen::Index i = 0; i < seq.X.rows(); ++i)
      if (seq.mask[i]) seq.X.row(i) = patterns.row(i % 2 ? a : b);
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

TEST(Model, ForwardMatchesLoopOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = oracles::tiny_model(seed);
    cfg.layers = seed == 3 ? 2 : 1;
    const auto p = random_params(cfg, seed);
    std::mt19937_64 rng(seed);
    MatrixD x(4, 3);
    oracles::fill_normal(x, rng);
    const std::vector<bool> valid{true, true, seed != 2, seed == 1};
    const MatrixD got = nn::reconstruct<double>(p, cfg, x, valid);
    const auto expected = loops::reconstruct(p, cfg, x, valid);
    for (Eigen::Index i = 0; i < 4; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(got(i, j), expected[i][j], 1e-10) << seed << ": " << i << "," << j;
  }
}

TEST(Model, GradientMatchesFiniteDifferences) {
  const auto o = oracles::check_model_gradient(17);
  EXPECT_TRUE(o.pass) << o.detail;
}

TEST(Model, DecoderIsCausal) {
  const auto o = oracles::check_decoder_causality(20, 5);
  EXPECT_TRUE(o.pass) << o.detail;
}

TEST(Model, EncoderIgnoresPaddedRows) {
  const auto cfg = oracles::tiny_model(4);
  const auto p = random_params(cfg, 4);
  std::mt19937_64 rng(4);
  MatrixD x(4, 3);
  oracles::fill_normal(x, rng);
  const std::vector<bool> valid{true, true, false, false};
  const auto a = nn::encoder_forward<double>(p, cfg, x, valid);
  x.bottomRows(2).setConstant(50.0);
  const auto b = nn::encoder_forward<double>(p, cfg, x, valid);
  EXPECT_LT((a.output.topRows(2) - b.output.topRows(2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.feature - b.feature).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(a.feature.norm(), 1.0, 1e-12);
}

TEST(Model, TeacherForcingShiftsByOne) {
  const auto cfg = oracles::tiny_model(1);
  const auto p = random_params(cfg, 1);
  MatrixD x(3, 3);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const MatrixD y = nn::teacher_forcing_input(p, x);
  EXPECT_EQ(y.row(0), p.start);
  EXPECT_EQ(y.row(1), x.row(0));
  EXPECT_EQ(y.row(2), x.row(1));
}

TEST(Model, ReconstructionLossExamples) {
  std::mt19937_64 rng(2);
  MatrixD x(4, 9);
  oracles::fill_normal(x, rng);
  const std::vector<bool> all(4, true);
  EXPECT_EQ(nn::reconstruction_loss<double>(x, x, all), 0.0);
  EXPECT_DOUBLE_EQ(nn::reconstruction_loss<double>(x, (x.array() + 1).matrix(), all), 6.0);
  const MatrixD y = x + MatrixD::Random(4, 9);
  double sq = 0;
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) sq += (x(i, j) - y(i, j)) * (x(i, j) - y(i, j));
  EXPECT_NEAR(nn::reconstruction_loss<double>(x, y, {true, true, true, false}), std::sqrt(sq), 1e-12);
}

TEST(Model, ConfigValidation) {
  auto c = oracles::tiny_model(0);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = oracles::tiny_model(0);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = oracles::tiny_model(0);
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_EQ(ModelConfig::paper().d_model, 512u);
}

TEST(Model, InputShapeIsChecked) {
  const auto cfg = oracles::tiny_model(0);
  const auto p = ModelParams<double>::init(cfg);
  EXPECT_THROW(nn::encoder_forward<double>(p, cfg, MatrixD::Zero(2, 4), {true, true}), ContractError);
  EXPECT_THROW(nn::encoder_forward<double>(p, cfg, MatrixD::Zero(2, 3), {false, false}), ContractError);
}

TEST(Training, ZeroLearningRateLeavesWeightsUntouched) {
  auto cfg = oracles::tiny_model(6);
  const auto data = patterned_sequences(cfg, 10, 6);
  nn::TrainConfig tc;
  tc.lr = 0;
  tc.epochs = 3;
  const auto r = nn::train<double>(data, cfg, tc);
  EXPECT_EQ(r.params, ModelParams<double>::init(cfg));
  ASSERT_EQ(r.loss_history.size(), 3u);
  EXPECT_EQ(r.loss_history[0], r.loss_history[2]);
}

TEST(Training, LossHalvesOnSyntheticSequences) {
  const auto cfg = oracles::tiny_model(7);
  const auto data = patterned_sequences(cfg, 50, 7);
  nn::TrainConfig tc;
  tc.epochs = 200;
  tc.lr = 1e-3;
  tc.seed = 7;
  double first = 0;
  std::size_t reached = 0;
  nn::train<double>(data, cfg, tc, [&](std::size_t epoch, double loss) {
    if (epoch == 0) first = loss;
    if (loss < 0.5 * first) {
      reached = epoch + 1;
      return false;
    }
    return true;
  });
  EXPECT_GT(reached, 0u) << "loss never fell below half of " << first;
}

TEST(Training, DeterministicForFixedSeed) {
  auto cfg = oracles::tiny_model(8);
  cfg.dropout = 0.1;
  const auto data = patterned_sequences(cfg, 12, 8);
  nn::TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.seed = 3;
  const auto a = nn::train<double>(data, cfg, tc), b = nn::train<double>(data, cfg, tc);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_history, b.loss_history);
  tc.seed = 4;
  EXPECT_NE(nn::train<double>(data, cfg, tc).params, a.params);
}

TEST(Training, AttackSequencesAreRejected) {
  const auto cfg = oracles::tiny_model(9);
  auto data = patterned_sequences(cfg, 3, 9);
  data[1].label = Label::attack;
  EXPECT_THROW(nn::train<double>(data, cfg, {}), ContractError);
  EXPECT_THROW(nn::train<double>(std::span<const embed::FeatureSequence>{}, cfg, {}), ContractError);
}

TEST(Training, FeatureIsEncoderPooledOutput) {
  const auto cfg = oracles::tiny_model(10);
  const auto p = random_params(cfg, 10);
  std::mt19937_64 rng(10);
  const auto seq = random_sequence(rng, cfg, "f");
  const auto f = nn::extract_feature<double>(seq, p, cfg);
  const auto e = nn::encoder_forward<double>(p, cfg, seq.X, seq.mask);
  EXPECT_LT((f - e.feature).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(f.norm(), 1.0, 1e-12);
}

TEST(Training, LossCsv) {
  std::ostringstream out;
  nn::write_loss_csv(out, {2.5, 1.25});
  EXPECT_EQ(out.str(), "epoch,mean_loss\n1,2.5\n2,1.25\n");
}

TEST(Checkpoint, RoundTripKeepsFloat32Values) {
  const auto cfg = oracles::tiny_model(11);
  auto p = random_params(cfg, 11);
  std::stringstream s;
  nn::save_checkpoint(s, cfg, p);
  const auto [loaded_cfg, loaded] = nn::load_checkpoint<double>(s);
  EXPECT_EQ(loaded_cfg, cfg);
  nn::round_to_float(p);
  EXPECT_EQ(loaded, p);
}

TEST(Checkpoint, BadMagicIsSchemaError) {
  std::stringstream s("definitely not a checkpoint");
  EXPECT_THROW(nn::load_checkpoint<double>(s), SchemaError);
}
