#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "provtrace/error.hpp"
#include "provtrace/linalg.hpp"
#include "provtrace/nn/layers.hpp"
#include "provtrace/random.hpp"

namespace provtrace::nn {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;  // per stack
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t n_max = 128;
  std::size_t input_dim = 64;  // m, the embedding width
  std::uint64_t seed = 0;

  std::size_t d_k() const noexcept { return d_model / heads; }

  /// Profile used by tests and desk-scale runs.
  static ModelConfig desk(std::size_t input_dim = 64) {
    ModelConfig c;
    c.input_dim = input_dim;
    return c;
  }

  /// Single-layer profile sized for one-core benchmark runs.
  static ModelConfig bench(std::size_t input_dim = 32) {
    ModelConfig c;
    c.layers = 1;
    c.n_max = 64;
    c.input_dim = input_dim;
    return c;
  }

  /// Full-size profile: 6 layers per stack, 8 heads, width 512.
  static ModelConfig paper(std::size_t input_dim = 64) {
    ModelConfig c;
    c.d_model = 512;
    c.layers = 6;
    c.heads = 8;
    c.d_ff = 2048;
    c.n_max = 512;
    c.input_dim = input_dim;
    return c;
  }

  void validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || d_ff == 0 || n_max == 0 ||
        input_dim == 0)
      throw ConfigError("model dimensions must be >= 1");
    if (d_model % heads != 0)
      throw ConfigError("d_model must be divisible by the head count");
    if (!(dropout >= 0 && dropout < 1))
      throw ConfigError("dropout must lie in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct EncoderLayerParams {
  MultiHeadParams<S> self_attn;
  LayerNormParams<S> norm1;
  FeedForwardParams<S> ffn;
  LayerNormParams<S> norm2;
};

template <class S>
struct DecoderLayerParams {
  MultiHeadParams<S> self_attn;
  LayerNormParams<S> norm1;
  MultiHeadParams<S> cross_attn;
  LayerNormParams<S> norm2;
  FeedForwardParams<S> ffn;
  LayerNormParams<S> norm3;
};

/// Named view of one parameter tensor.
template <class T>
struct TensorRef {
  std::string name;
  T* data;
  Eigen::Index rows, cols;

  Eigen::Index size() const noexcept { return rows * cols; }
};

template <class S>
struct ModelParams {
  Matrix<S> in_w;  // m x d_model, shared by encoder and decoder inputs
  RowVector<S> in_b;
  Matrix<S> out_w;  // d_model x m
  RowVector<S> out_b;
  RowVector<S> start;  // decoder start token, width m
  std::vector<EncoderLayerParams<S>> encoder;
  std::vector<DecoderLayerParams<S>> decoder;

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("in.w", self.in_w);
    f("in.b", self.in_b);
    f("out.w", self.out_w);
    f("out.b", self.out_b);
    f("start", self.start);
    auto attn = [&](const std::string& p, auto& a) {
      f(p + ".wq", a.wq);
      f(p + ".wk", a.wk);
      f(p + ".wv", a.wv);
      f(p + ".wo", a.wo);
    };
    auto norm = [&](const std::string& p, auto& n) {
      f(p + ".gain", n.gain);
      f(p + ".bias", n.bias);
    };
    auto ffn = [&](const std::string& p, auto& n) {
      f(p + ".w1", n.w1);
      f(p + ".b1", n.b1);
      f(p + ".w2", n.w2);
      f(p + ".b2", n.b2);
    };
    for (std::size_t i = 0; i < self.encoder.size(); ++i) {
      const auto p = "enc" + std::to_string(i);
      attn(p + ".self", self.encoder[i].self_attn);
      norm(p + ".norm1", self.encoder[i].norm1);
      ffn(p + ".ffn", self.encoder[i].ffn);
      norm(p + ".norm2", self.encoder[i].norm2);
    }
    for (std::size_t i = 0; i < self.decoder.size(); ++i) {
      const auto p = "dec" + std::to_string(i);
      attn(p + ".self", self.decoder[i].self_attn);
      norm(p + ".norm1", self.decoder[i].norm1);
      attn(p + ".cross", self.decoder[i].cross_attn);
      norm(p + ".norm2", self.decoder[i].norm2);
      ffn(p + ".ffn", self.decoder[i].ffn);
      norm(p + ".norm3", self.decoder[i].norm3);
    }
  }

  std::vector<TensorRef<S>> tensors() {
    std::vector<TensorRef<S>> out;
    visit(*this, [&](const std::string& name, auto& t) {
      out.push_back({name, t.data(), t.rows(), t.cols()});
    });
    return out;
  }

  std::vector<TensorRef<const S>> tensors() const {
    std::vector<TensorRef<const S>> out;
    visit(*this, [&](const std::string& name, const auto& t) {
      out.push_back({name, t.data(), t.rows(), t.cols()});
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.size());
    return n;
  }

  /// All-zero parameters with the shapes implied by `config`.
  static ModelParams zeros(const ModelConfig& config) {
    config.validate();
    const auto d = static_cast<Eigen::Index>(config.d_model);
    const auto m = static_cast<Eigen::Index>(config.input_dim);
    const auto f = static_cast<Eigen::Index>(config.d_ff);
    auto attn = [&] {
      return MultiHeadParams<S>{Matrix<S>::Zero(d, d), Matrix<S>::Zero(d, d),
                                Matrix<S>::Zero(d, d), Matrix<S>::Zero(d, d)};
    };
    auto norm = [&] {
      return LayerNormParams<S>{RowVector<S>::Zero(d), RowVector<S>::Zero(d)};
    };
    auto ffn = [&] {
      return FeedForwardParams<S>{Matrix<S>::Zero(d, f), RowVector<S>::Zero(f),
                                  Matrix<S>::Zero(f, d), RowVector<S>::Zero(d)};
    };
    ModelParams p;
    p.in_w = Matrix<S>::Zero(m, d);
    p.in_b = RowVector<S>::Zero(d);
    p.out_w = Matrix<S>::Zero(d, m);
    p.out_b = RowVector<S>::Zero(m);
    p.start = RowVector<S>::Zero(m);
    for (std::size_t i = 0; i < config.layers; ++i) {
      p.encoder.push_back({attn(), norm(), ffn(), norm()});
      p.decoder.push_back({attn(), norm(), attn(), norm(), ffn(), norm()});
    }
    return p;
  }

  /// Xavier-uniform weights, unit LayerNorm gains, zero biases, small random
  /// start token.
  static ModelParams init(const ModelConfig& config) {
    ModelParams p = zeros(config);
    std::mt19937_64 rng(derive_seed(config.seed, "model-init"));
    visit(p, [&](const std::string& name, auto& t) {
      const bool is_gain = name.ends_with(".gain");
      const bool is_bias = name.ends_with(".bias") || name.ends_with(".b") ||
                           name.ends_with(".b1") || name.ends_with(".b2");
      if (is_gain) {
        t.setOnes();
      } else if (name == "start") {
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(u(rng));
      } else if (!is_bias) {
        const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(u(rng));
      }
    });
    return p;
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    auto src = tensors();
    // Shapes first, then values, in visit order.
    out.encoder.resize(encoder.size());
    out.decoder.resize(decoder.size());
    std::size_t i = 0;
    ModelParams<T>::visit(out, [&](const std::string&, auto& t) {
      t.resize(src[i].rows, src[i].cols);
      for (Eigen::Index k = 0; k < t.size(); ++k)
        t.data()[k] = static_cast<T>(src[i].data[k]);
      ++i;
    });
    return out;
  }

  void set_zero() {
    visit(*this, [](const std::string&, auto& t) { t.setZero(); });
  }

  bool all_finite() const {
    bool ok = true;
    visit(*this, [&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  bool operator==(const ModelParams& other) const {
    auto a = tensors();
    auto b = other.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].rows != b[i].rows || a[i].cols != b[i].cols) return false;
      for (Eigen::Index k = 0; k < a[i].size(); ++k)
        if (a[i].data[k] != b[i].data[k]) return false;
    }
    return true;
  }
};

/// Encoder result: per-position outputs and the pooled, unit-norm feature.
template <class S>
struct EncodedOutput {
  Matrix<S> output;
  RowVector<S> feature;
};

namespace detail {

template <class S>
struct EncoderLayerCache {
  MultiHeadCache<S> attn;
  Dropout<S> drop1;
  LayerNormCache<S> norm1;
  FeedForwardCache<S> ffn;
  Dropout<S> drop2;
  LayerNormCache<S> norm2;
};

template <class S>
struct DecoderLayerCache {
  MultiHeadCache<S> self_attn;
  Dropout<S> drop1;
  LayerNormCache<S> norm1;
  MultiHeadCache<S> cross_attn;
  Dropout<S> drop2;
  LayerNormCache<S> norm2;
  FeedForwardCache<S> ffn;
  Dropout<S> drop3;
  LayerNormCache<S> norm3;
};

// Dropout source for one forward pass; a null rng disables dropout.
struct DropoutSource {
  double p = 0;
  std::mt19937_64* rng = nullptr;

  template <class S>
  Dropout<S> sample(const Matrix<S>& like) const {
    return Dropout<S>::sample(like.rows(), like.cols(), p, rng);
  }
};

template <class S>
Matrix<S> encoder_layer(const EncoderLayerParams<S>& p, std::size_t heads,
                        const Matrix<S>& x, const Mask& mask,
                        const DropoutSource& drop, EncoderLayerCache<S>& c) {
  Matrix<S> a = multi_head<S>(x, x, p.self_attn, heads, mask, &c.attn);
  c.drop1 = drop.sample(a);
  Matrix<S> h = layer_norm<S>(x + c.drop1.apply(a), p.norm1, &c.norm1);
  Matrix<S> f = feed_forward<S>(h, p.ffn, &c.ffn);
  c.drop2 = drop.sample(f);
  return layer_norm<S>(h + c.drop2.apply(f), p.norm2, &c.norm2);
}

template <class S>
Matrix<S> encoder_layer_backward(const EncoderLayerParams<S>& p,
                                 std::size_t heads,
                                 const EncoderLayerCache<S>& c,
                                 const Matrix<S>& dout,
                                 EncoderLayerParams<S>& g) {
  Matrix<S> dr2 = layer_norm_backward<S>(p.norm2, c.norm2, dout, g.norm2);
  Matrix<S> dh = dr2 + feed_forward_backward<S>(p.ffn, c.ffn, c.drop2.backward(dr2), g.ffn);
  Matrix<S> dr1 = layer_norm_backward<S>(p.norm1, c.norm1, dh, g.norm1);
  Matrix<S> dxq, dxkv;
  multi_head_backward<S>(p.self_attn, heads, c.attn, c.drop1.backward(dr1),
                         g.self_attn, dxq, dxkv);
  return dr1 + dxq + dxkv;
}

template <class S>
Matrix<S> decoder_layer(const DecoderLayerParams<S>& p, std::size_t heads,
                        const Matrix<S>& y, const Matrix<S>& memory,
                        const Mask& self_mask, const Mask& cross_mask,
                        const DropoutSource& drop, DecoderLayerCache<S>& c) {
  Matrix<S> s = multi_head<S>(y, y, p.self_attn, heads, self_mask, &c.self_attn);
  c.drop1 = drop.sample(s);
  Matrix<S> h1 = layer_norm<S>(y + c.drop1.apply(s), p.norm1, &c.norm1);
  Matrix<S> x = multi_head<S>(h1, memory, p.cross_attn, heads, cross_mask, &c.cross_attn);
  c.drop2 = drop.sample(x);
  Matrix<S> h2 = layer_norm<S>(h1 + c.drop2.apply(x), p.norm2, &c.norm2);
  Matrix<S> f = feed_forward<S>(h2, p.ffn, &c.ffn);
  c.drop3 = drop.sample(f);
  return layer_norm<S>(h2 + c.drop3.apply(f), p.norm3, &c.norm3);
}

// Returns d(input); adds the gradient w.r.t. the encoder memory to dmemory.
template <class S>
Matrix<S> decoder_layer_backward(const DecoderLayerParams<S>& p,
                                 std::size_t heads,
                                 const DecoderLayerCache<S>& c,
                                 const Matrix<S>& dout, DecoderLayerParams<S>& g,
                                 Matrix<S>& dmemory) {
  Matrix<S> dr3 = layer_norm_backward<S>(p.norm3, c.norm3, dout, g.norm3);
  Matrix<S> dh2 = dr3 + feed_forward_backward<S>(p.ffn, c.ffn, c.drop3.backward(dr3), g.ffn);
  Matrix<S> dr2 = layer_norm_backward<S>(p.norm2, c.norm2, dh2, g.norm2);
  Matrix<S> dq, dkv;
  multi_head_backward<S>(p.cross_attn, heads, c.cross_attn, c.drop2.backward(dr2),
                         g.cross_attn, dq, dkv);
  dmemory += dkv;
  Matrix<S> dh1 = dr2 + dq;
  Matrix<S> dr1 = layer_norm_backward<S>(p.norm1, c.norm1, dh1, g.norm1);
  Matrix<S> dsq, dskv;
  multi_head_backward<S>(p.self_attn, heads, c.self_attn, c.drop1.backward(dr1),
                         g.self_attn, dsq, dskv);
  return dr1 + dsq + dskv;
}

template <class S>
void check_input(const ModelConfig& config, const Matrix<S>& x,
                 const std::vector<bool>& valid) {
  if (x.cols() != static_cast<Eigen::Index>(config.input_dim))
    throw ContractError("input width " + std::to_string(x.cols()) +
                        " != model input_dim " + std::to_string(config.input_dim));
  if (static_cast<std::size_t>(x.rows()) != valid.size())
    throw ContractError("mask length does not match sequence length");
  if (x.rows() == 0 || std::find(valid.begin(), valid.end(), true) == valid.end())
    throw ContractError("sequence has no valid positions");
}

template <class S>
Matrix<S> embed_input(const ModelParams<S>& p, const Matrix<S>& x) {
  Matrix<S> e = (x * p.in_w).rowwise() + p.in_b;
  e += positional_encoding<S>(static_cast<std::size_t>(x.rows()),
                              static_cast<std::size_t>(p.in_w.cols()));
  return e;
}

// Everything a training step needs to run backward.
template <class S>
struct PassCache {
  Matrix<S> x, y_in, memory, dec_out;
  Dropout<S> enc_drop, dec_drop;
  std::vector<EncoderLayerCache<S>> enc;
  std::vector<DecoderLayerCache<S>> dec;
};

template <class S>
Matrix<S> run_encoder(const ModelParams<S>& p, const ModelConfig& config,
                      const Matrix<S>& x, const std::vector<bool>& valid,
                      const DropoutSource& drop, PassCache<S>& c) {
  Matrix<S> e = embed_input(p, x);
  c.enc_drop = drop.sample(e);
  Matrix<S> h = c.enc_drop.apply(e);
  const Mask mask = padding_mask(static_cast<std::size_t>(x.rows()), valid);
  c.enc.resize(p.encoder.size());
  for (std::size_t i = 0; i < p.encoder.size(); ++i)
    h = encoder_layer<S>(p.encoder[i], config.heads, h, mask, drop, c.enc[i]);
  return h;
}

template <class S>
Matrix<S> run_decoder(const ModelParams<S>& p, const ModelConfig& config,
                      const Matrix<S>& y_in, const Matrix<S>& memory,
                      const std::vector<bool>& valid, const DropoutSource& drop,
                      PassCache<S>& c) {
  Matrix<S> e = embed_input(p, y_in);
  c.dec_drop = drop.sample(e);
  Matrix<S> h = c.dec_drop.apply(e);
  const Mask self_mask = causal_mask(valid);
  const Mask cross_mask = padding_mask(static_cast<std::size_t>(y_in.rows()), valid);
  c.dec.resize(p.decoder.size());
  for (std::size_t i = 0; i < p.decoder.size(); ++i)
    h = decoder_layer<S>(p.decoder[i], config.heads, h, memory, self_mask,
                         cross_mask, drop, c.dec[i]);
  c.dec_out = h;
  return (h * p.out_w).rowwise() + p.out_b;
}

}  // namespace detail

/// Teacher-forced decoder input: the start token followed by rows 0..n-2.
template <class S>
Matrix<S> teacher_forcing_input(const ModelParams<S>& p, const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  if (x.rows() == 0) return y;
  y.row(0) = p.start;
  if (x.rows() > 1) y.bottomRows(x.rows() - 1) = x.topRows(x.rows() - 1);
  return y;
}

/// Mean of the valid output rows, scaled to unit L2 norm.
template <class S>
RowVector<S> pool_feature(const Matrix<S>& output, const std::vector<bool>& valid) {
  RowVector<S> sum = RowVector<S>::Zero(output.cols());
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < output.rows(); ++i)
    if (valid[static_cast<std::size_t>(i)]) {
      sum += output.row(i);
      ++n;
    }
  if (n == 0) throw ContractError("cannot pool a sequence without valid rows");
  RowVector<S> mean = sum / static_cast<S>(n);
  const S norm = mean.norm();
  if (!(norm > 0) || !std::isfinite(static_cast<double>(norm)))
    throw DivergenceError("encoder produced a degenerate feature vector");
  return mean / norm;
}

/// Encoder stack without dropout. x: n x m, valid: n flags.
template <class S>
EncodedOutput<S> encoder_forward(const ModelParams<S>& p,
                                 const ModelConfig& config, const Matrix<S>& x,
                                 const std::vector<bool>& valid) {
  detail::check_input(config, x, valid);
  detail::PassCache<S> cache;
  EncodedOutput<S> out;
  out.output = detail::run_encoder<S>(p, config, x, valid, {}, cache);
  out.feature = pool_feature<S>(out.output, valid);
  return out;
}

/// Decoder stack without dropout. Returns the n x m reconstruction.
template <class S>
Matrix<S> decoder_forward(const ModelParams<S>& p, const ModelConfig& config,
                          const Matrix<S>& y_in, const Matrix<S>& memory,
                          const std::vector<bool>& valid) {
  if (y_in.cols() != static_cast<Eigen::Index>(config.input_dim))
    throw ContractError("decoder input width mismatch");
  if (memory.cols() != static_cast<Eigen::Index>(config.d_model) ||
      memory.rows() != y_in.rows() ||
      static_cast<std::size_t>(y_in.rows()) != valid.size())
    throw ContractError("decoder input and encoder output shapes disagree");
  detail::PassCache<S> cache;
  return detail::run_decoder<S>(p, config, y_in, memory, valid, {}, cache);
}

/// Full autoencoder pass (teacher forcing, no dropout).
template <class S>
Matrix<S> reconstruct(const ModelParams<S>& p, const ModelConfig& config,
                      const Matrix<S>& x, const std::vector<bool>& valid) {
  auto enc = encoder_forward<S>(p, config, x, valid);
  return decoder_forward<S>(p, config, teacher_forcing_input(p, x), enc.output, valid);
}

/// Frobenius norm of x - x_rec over the valid rows.
template <class S>
S reconstruction_loss(const Matrix<S>& x, const Matrix<S>& x_rec,
                      const std::vector<bool>& valid) {
  if (x.rows() != x_rec.rows() || x.cols() != x_rec.cols())
    throw ContractError("reconstruction_loss: shape mismatch");
  S total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (valid[static_cast<std::size_t>(i)]) total += (x.row(i) - x_rec.row(i)).squaredNorm();
  return std::sqrt(total);
}

/// Forward and backward for one sequence. Adds grad_scale * d(loss)/d(theta)
/// into `grad` and returns the loss. Pass a null rng to disable dropout.
template <class S>
S loss_and_gradient(const ModelParams<S>& p, const ModelConfig& config,
                    const Matrix<S>& x, const std::vector<bool>& valid,
                    ModelParams<S>& grad, S grad_scale,
                    std::mt19937_64* dropout_rng = nullptr) {
  detail::check_input(config, x, valid);
  const detail::DropoutSource drop{config.dropout, dropout_rng};
  detail::PassCache<S> c;
  c.memory = detail::run_encoder<S>(p, config, x, valid, drop, c);
  c.y_in = teacher_forcing_input(p, x);
  Matrix<S> y = detail::run_decoder<S>(p, config, c.y_in, c.memory, valid, drop, c);

  const S loss = reconstruction_loss<S>(x, y, valid);
  if (!std::isfinite(static_cast<double>(loss)))
    throw DivergenceError("reconstruction loss is not finite");
  if (loss == S(0)) return loss;  // the norm is not differentiable at 0

  Matrix<S> dy = (y - x) * (grad_scale / loss);
  for (Eigen::Index i = 0; i < dy.rows(); ++i)
    if (!valid[static_cast<std::size_t>(i)]) dy.row(i).setZero();

  grad.out_w.noalias() += c.dec_out.transpose() * dy;
  grad.out_b += dy.colwise().sum();
  Matrix<S> dh = dy * p.out_w.transpose();
  Matrix<S> dmemory = Matrix<S>::Zero(c.memory.rows(), c.memory.cols());
  for (std::size_t i = p.decoder.size(); i-- > 0;)
    dh = detail::decoder_layer_backward<S>(p.decoder[i], config.heads, c.dec[i], dh,
                                           grad.decoder[i], dmemory);
  Matrix<S> de = c.dec_drop.backward(dh);
  grad.in_w.noalias() += c.y_in.transpose() * de;
  grad.in_b += de.colwise().sum();
  grad.start += (de.row(0) * p.in_w.transpose());

  dh = std::move(dmemory);
  for (std::size_t i = p.encoder.size(); i-- > 0;)
    dh = detail::encoder_layer_backward<S>(p.encoder[i], config.heads, c.enc[i], dh,
                                           grad.encoder[i]);
  de = c.enc_drop.backward(dh);
  grad.in_w.noalias() += x.transpose() * de;
  grad.in_b += de.colwise().sum();
  return loss;
}

}  // namespace provtrace::nn
