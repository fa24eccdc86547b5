#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "provtrace/embed/sequence.hpp"
#include "provtrace/error.hpp"
#include "provtrace/nn/transformer.hpp"
#include "provtrace/random.hpp"

namespace provtrace::nn {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    // lr == 0 is accepted so a run can be replayed without moving weights.
    if (!(lr >= 0)) throw ConfigError("learning rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("Adam betas must lie in [0, 1)");
  }
};

/// Adam with bias correction.
template <class S>
class Adam {
 public:
  Adam(const ModelConfig& model, const TrainConfig& config)
      : config_(config),
        m_(ModelParams<S>::zeros(model)),
        v_(ModelParams<S>::zeros(model)) {}

  void step(ModelParams<S>& params, const ModelParams<S>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto p = params.tensors();
    auto g = grad.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    const S b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2);
    const S lr = static_cast<S>(config_.lr), eps = static_cast<S>(config_.eps);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (Eigen::Index k = 0; k < p[i].size(); ++k) {
        const S gk = g[i].data[k];
        S& mk = m[i].data[k];
        S& vk = v[i].data[k];
        mk = b1 * mk + (S(1) - b1) * gk;
        vk = b2 * vk + (S(1) - b2) * gk * gk;
        const S m_hat = mk / static_cast<S>(c1);
        const S v_hat = vk / static_cast<S>(c2);
        p[i].data[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
  }

 private:
  TrainConfig config_;
  ModelParams<S> m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales `grad` so its global L2 norm is at most max_norm. Returns the norm
/// before clipping.
template <class S>
double clip_gradient(ModelParams<S>& grad, double max_norm) {
  double sq = 0;
  for (const auto& t : std::as_const(grad).tensors())
    for (Eigen::Index k = 0; k < t.size(); ++k)
      sq += static_cast<double>(t.data[k]) * static_cast<double>(t.data[k]);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& t : grad.tensors())
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data[k] *= scale;
  }
  return norm;
}

/// A sequence in the model's scalar type with trailing padding removed
/// (trailing padded rows never influence valid positions).
template <class S>
struct Sample {
  Matrix<S> x;
  std::vector<bool> valid;
};

template <class S>
Sample<S> to_sample(const embed::FeatureSequence& seq) {
  std::size_t end = seq.mask.size();
  while (end > 0 && !seq.mask[end - 1]) --end;
  Sample<S> s;
  s.x = seq.X.topRows(static_cast<Eigen::Index>(end)).template cast<S>();
  s.valid.assign(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(end));
  return s;
}

template <class S>
struct TrainResult {
  ModelParams<S> params;
  std::vector<double> loss_history;  // mean per-sequence loss of each epoch
};

/// Called after each epoch with (epoch index, mean loss); return false to stop.
using EpochCallback = std::function<bool(std::size_t, double)>;

/// Minibatch Adam on the reconstruction loss with teacher forcing. Dropout is
/// active during training only. Deterministic for a fixed seed.
/// Training data must not contain attack-labeled sequences.
template <class S>
TrainResult<S> train(std::span<const embed::FeatureSequence> data,
                     const ModelConfig& model, const TrainConfig& config,
                     const EpochCallback& on_epoch = {}) {
  model.validate();
  config.validate();
  if (data.empty()) throw ContractError("training set is empty");
  std::vector<Sample<S>> samples;
  samples.reserve(data.size());
  for (const auto& seq : data) {
    if (seq.label == Label::attack)
      throw ContractError("attack-labeled sequence '" + seq.graph_id +
                          "' in training data");
    samples.push_back(to_sample<S>(seq));
  }

  TrainResult<S> result{ModelParams<S>::init(model), {}};
  ModelParams<S> grad = ModelParams<S>::zeros(model);
  Adam<S> adam(model, config);
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> losses(samples.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const S scale = S(1) / static_cast<S>(stop - start);
      grad.set_zero();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = samples[order[b]];
        losses[order[b]] = static_cast<double>(loss_and_gradient<S>(
            result.params, model, s.x, s.valid, grad, scale,
            model.dropout > 0 ? &dropout_rng : nullptr));
      }
      clip_gradient(grad, config.grad_clip);
      adam.step(result.params, grad);
    }
    // Summed in dataset order so the value does not depend on the shuffle.
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) /
                        static_cast<double>(losses.size());
    if (!std::isfinite(mean) || !result.params.all_finite())
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1));
    result.loss_history.push_back(mean);
    if (on_epoch && !on_epoch(epoch, mean)) break;
  }
  return result;
}

/// Long-term feature of one sequence: the encoder's pooled output.
template <class S>
RowVector<S> extract_feature(const embed::FeatureSequence& seq,
                             const ModelParams<S>& params,
                             const ModelConfig& model) {
  auto s = to_sample<S>(seq);
  return encoder_forward<S>(params, model, s.x, s.valid).feature;
}

inline void write_loss_csv(std::ostream& out, const std::vector<double>& history) {
  out << "epoch,mean_loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < history.size(); ++i)
    out << (i + 1) << ',' << history[i] << '\n';
}

}  // namespace provtrace::nn
