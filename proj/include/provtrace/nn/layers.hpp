#pragma once

// Building blocks of the transformer: masked scaled dot-product attention,
// multi-head attention, position-wise feed-forward, layer normalization,
// sinusoidal positional encoding and dropout. Every block with parameters has
// a forward that can fill a cache and a backward that consumes it.

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "provtrace/error.hpp"
#include "provtrace/linalg.hpp"

namespace provtrace::nn {

/// Attention visibility: mask(i, j) == true lets query i see key j.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// rows x keys mask that hides padded keys.
inline Mask padding_mask(std::size_t rows, const std::vector<bool>& key_valid) {
  Mask m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(key_valid.size()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).setConstant(key_valid[j]);
  return m;
}

/// n x n mask: query i sees valid keys j <= i.
inline Mask causal_mask(const std::vector<bool>& key_valid) {
  const auto n = static_cast<Eigen::Index>(key_valid.size());
  Mask m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = j <= i && key_valid[j];
  return m;
}

/// Row-wise softmax over the visible entries; hidden entries get weight 0.
template <class S>
Matrix<S> masked_softmax(const Matrix<S>& scores, const Mask& mask) {
  Matrix<S> w = Matrix<S>::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    S peak = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (mask(i, j) && scores(i, j) > peak) peak = scores(i, j);
    if (peak == -std::numeric_limits<S>::infinity())
      throw ContractError("attention row " + std::to_string(i) +
                          " has every position occluded");
    S total = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (mask(i, j)) total += w(i, j) = std::exp(scores(i, j) - peak);
    w.row(i) /= total;
  }
  return w;
}

/// softmax(q k^T / sqrt(d_k)) v with occluded scores treated as -inf.
/// q: a x d_k, k: b x d_k, v: b x d_v, mask: a x b.
template <class S>
Matrix<S> attention(const Matrix<S>& q, const Matrix<S>& k, const Matrix<S>& v,
                    const Mask& mask, Matrix<S>* weights_out = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || mask.rows() != q.rows() ||
      mask.cols() != k.rows())
    throw ContractError("attention: shape mismatch");
  const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
  Matrix<S> scores = (q * k.transpose()) * scale;
  Matrix<S> w = masked_softmax<S>(scores, mask);
  Matrix<S> out = w * v;
  if (weights_out) *weights_out = std::move(w);
  return out;
}

/// Gradients of attention() given its softmax weights.
template <class S>
void attention_backward(const Matrix<S>& q, const Matrix<S>& k,
                        const Matrix<S>& v, const Matrix<S>& weights,
                        const Matrix<S>& dout, Matrix<S>& dq, Matrix<S>& dk,
                        Matrix<S>& dv) {
  const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
  dv.noalias() = weights.transpose() * dout;
  Matrix<S> dw = dout * v.transpose();
  // softmax Jacobian, row by row; occluded weights are 0 so they stay 0.
  Eigen::Matrix<S, Eigen::Dynamic, 1> inner = (dw.cwiseProduct(weights)).rowwise().sum();
  Matrix<S> ds = weights.cwiseProduct(dw - inner.replicate(1, dw.cols())) * scale;
  dq.noalias() = ds * k;
  dk.noalias() = ds.transpose() * q;
}

template <class S>
struct MultiHeadParams {
  Matrix<S> wq, wk, wv;  // d_model x (heads * d_k); head i owns a column block
  Matrix<S> wo;          // (heads * d_v) x d_model
};

template <class S>
struct MultiHeadCache {
  Matrix<S> xq, xkv, q, k, v, concat;
  std::vector<Matrix<S>> weights;
};

/// Concat(head_1..head_h) W^O with head_i = attention(xq Wq_i, xkv Wk_i, xkv Wv_i).
template <class S>
Matrix<S> multi_head(const Matrix<S>& xq, const Matrix<S>& xkv,
                     const MultiHeadParams<S>& p, std::size_t heads,
                     const Mask& mask, MultiHeadCache<S>* cache = nullptr) {
  const auto width = p.wq.cols();
  if (heads == 0 || width % static_cast<Eigen::Index>(heads) != 0)
    throw ContractError("multi_head: width not divisible by head count");
  const auto dk = width / static_cast<Eigen::Index>(heads);
  Matrix<S> q = xq * p.wq, k = xkv * p.wk, v = xkv * p.wv;
  Matrix<S> concat(xq.rows(), width);
  std::vector<Matrix<S>> weights(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dk;
    Matrix<S> qh = q.middleCols(c0, dk), kh = k.middleCols(c0, dk),
              vh = v.middleCols(c0, dk);
    concat.middleCols(c0, dk) = attention<S>(qh, kh, vh, mask, &weights[h]);
  }
  Matrix<S> out = concat * p.wo;
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->weights = std::move(weights);
  }
  return out;
}

/// Accumulates parameter gradients into `grad`; writes input gradients.
template <class S>
void multi_head_backward(const MultiHeadParams<S>& p, std::size_t heads,
                         const MultiHeadCache<S>& c, const Matrix<S>& dout,
                         MultiHeadParams<S>& grad, Matrix<S>& dxq,
                         Matrix<S>& dxkv) {
  const auto width = p.wq.cols();
  const auto dk = width / static_cast<Eigen::Index>(heads);
  grad.wo.noalias() += c.concat.transpose() * dout;
  Matrix<S> dconcat = dout * p.wo.transpose();
  Matrix<S> dq(c.q.rows(), width), dk_all(c.k.rows(), width),
      dv(c.v.rows(), width);
  Matrix<S> dqh, dkh, dvh;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dk;
    Matrix<S> qh = c.q.middleCols(c0, dk), kh = c.k.middleCols(c0, dk),
              vh = c.v.middleCols(c0, dk), douth = dconcat.middleCols(c0, dk);
    attention_backward<S>(qh, kh, vh, c.weights[h], douth, dqh, dkh, dvh);
    dq.middleCols(c0, dk) = dqh;
    dk_all.middleCols(c0, dk) = dkh;
    dv.middleCols(c0, dk) = dvh;
  }
  grad.wq.noalias() += c.xq.transpose() * dq;
  grad.wk.noalias() += c.xkv.transpose() * dk_all;
  grad.wv.noalias() += c.xkv.transpose() * dv;
  dxq.noalias() = dq * p.wq.transpose();
  dxkv.noalias() = dk_all * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
}

template <class S>
struct LayerNormParams {
  RowVector<S> gain, bias;
};

template <class S>
struct LayerNormCache {
  Matrix<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
};

inline constexpr double layer_norm_eps = 1e-5;

/// Row-wise (x - mean) / sqrt(var + eps) * gain + bias, population variance.
template <class S>
Matrix<S> layer_norm(const Matrix<S>& x, const LayerNormParams<S>& p,
                     LayerNormCache<S>* cache = nullptr) {
  const auto d = static_cast<S>(x.cols());
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().sum() / d;
  Matrix<S> centered = x - mean.replicate(1, x.cols());
  Eigen::Matrix<S, Eigen::Dynamic, 1> var =
      centered.cwiseAbs2().rowwise().sum() / d;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv =
      (var.array() + static_cast<S>(layer_norm_eps)).rsqrt();
  Matrix<S> xhat = centered.array().colwise() * inv.array();
  Matrix<S> y = (xhat.array().rowwise() * p.gain.array()).rowwise() +
                p.bias.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

/// Single-vector form.
template <class S>
RowVector<S> layer_norm(const RowVector<S>& x, const RowVector<S>& gain,
                        const RowVector<S>& bias) {
  Matrix<S> row = x;
  return layer_norm<S>(row, LayerNormParams<S>{gain, bias}).row(0);
}

template <class S>
Matrix<S> layer_norm_backward(const LayerNormParams<S>& p,
                              const LayerNormCache<S>& c, const Matrix<S>& dy,
                              LayerNormParams<S>& grad) {
  const auto d = static_cast<S>(dy.cols());
  grad.gain += dy.cwiseProduct(c.xhat).colwise().sum();
  grad.bias += dy.colwise().sum();
  Matrix<S> dxhat = dy.array().rowwise() * p.gain.array();
  Eigen::Matrix<S, Eigen::Dynamic, 1> sum_d = dxhat.rowwise().sum();
  Eigen::Matrix<S, Eigen::Dynamic, 1> sum_dx = dxhat.cwiseProduct(c.xhat).rowwise().sum();
  Matrix<S> dx = (dxhat * d - sum_d.replicate(1, dy.cols()) -
                  c.xhat.cwiseProduct(sum_dx.replicate(1, dy.cols())));
  return dx.array().colwise() * (c.inv_std.array() / d);
}

template <class S>
struct FeedForwardParams {
  Matrix<S> w1;  // d_model x d_ff
  RowVector<S> b1;
  Matrix<S> w2;  // d_ff x d_model
  RowVector<S> b2;
};

template <class S>
struct FeedForwardCache {
  Matrix<S> input, hidden;  // hidden = pre-activation
};

/// ReLU(h W1 + b1) W2 + b2, applied to each row independently.
template <class S>
Matrix<S> feed_forward(const Matrix<S>& h, const FeedForwardParams<S>& p,
                       FeedForwardCache<S>* cache = nullptr) {
  Matrix<S> hidden = (h * p.w1).rowwise() + p.b1;
  Matrix<S> out = (hidden.cwiseMax(S(0)) * p.w2).rowwise() + p.b2;
  if (cache) {
    cache->input = h;
    cache->hidden = std::move(hidden);
  }
  return out;
}

template <class S>
Matrix<S> feed_forward_backward(const FeedForwardParams<S>& p,
                                const FeedForwardCache<S>& c,
                                const Matrix<S>& dout,
                                FeedForwardParams<S>& grad) {
  Matrix<S> active = c.hidden.cwiseMax(S(0));
  grad.w2.noalias() += active.transpose() * dout;
  grad.b2 += dout.colwise().sum();
  Matrix<S> dhidden = (dout * p.w2.transpose()).array() *
                      (c.hidden.array() > S(0)).template cast<S>();
  grad.w1.noalias() += c.input.transpose() * dhidden;
  grad.b1 += dhidden.colwise().sum();
  return dhidden * p.w1.transpose();
}

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same angle).
template <class S>
Matrix<S> positional_encoding(std::size_t n, std::size_t d_model) {
  Matrix<S> pe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_model));
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = static_cast<S>(std::sin(angle));
      if (i + 1 < d_model) pe(pos, i + 1) = static_cast<S>(std::cos(angle));
    }
  return pe;
}

/// Inverted dropout. An empty keep-matrix means identity (inference, or p = 0).
template <class S>
struct Dropout {
  Matrix<S> keep;

  static Dropout sample(Eigen::Index rows, Eigen::Index cols, double p,
                        std::mt19937_64* rng) {
    Dropout d;
    if (p <= 0 || rng == nullptr) return d;
    std::bernoulli_distribution survive(1.0 - p);
    const S scale = static_cast<S>(1.0 / (1.0 - p));
    d.keep.resize(rows, cols);
    for (Eigen::Index i = 0; i < d.keep.size(); ++i)
      d.keep.data()[i] = survive(*rng) ? scale : S(0);
    return d;
  }

  Matrix<S> apply(const Matrix<S>& x) const {
    return keep.size() ? Matrix<S>(x.cwiseProduct(keep)) : x;
  }
  Matrix<S> backward(const Matrix<S>& dy) const { return apply(dy); }
};

}  // namespace provtrace::nn
