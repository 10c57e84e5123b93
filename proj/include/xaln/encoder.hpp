// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Transformer encoder layer: chunked multi-head self-attention with key
// padding masks, post-norm residuals, and a ReLU feed-forward block.

#pragma once

#include <cmath>
#include <vector>

#include "xaln/mask.hpp"
#include "xaln/rng.hpp"
#include "xaln/tensor.hpp"

namespace xaln {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskBias = -1e9;

template <typename S>
struct LinearParams {
  Tensor<S> w;  // [in x out]
  Tensor<S> b;  // [1 x out]

  void collect(std::vector<Tensor<S>>& out) const {
    out.push_back(w);
    out.push_back(b);
  }
  Eigen::Index param_count() const { return w.size() + b.size(); }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gain;  // [1 x d]
  Tensor<S> bias;  // [1 x d]

  void collect(std::vector<Tensor<S>>& out) const {
    out.push_back(gain);
    out.push_back(bias);
  }
  Eigen::Index param_count() const { return gain.size() + bias.size(); }
};

/// One encoder layer. The input is chunked into head_count slices of
/// model_dim / head_count features; each head projects and attends over its
/// own chunk, the heads are concatenated and output-projected.
template <typename S>
struct EncoderLayerParams {
  int head_count = 1;
  int model_dim = 0;
  int ffn_dim = 0;
  double dropout_rate = 0.0;
  std::vector<LinearParams<S>> q_proj, k_proj, v_proj;  // per head
  LinearParams<S> out_proj;
  LinearParams<S> ffn1, ffn2;
  LayerNormParams<S> ln1, ln2;

  void collect(std::vector<Tensor<S>>& out) const {
    for (int h = 0; h < head_count; ++h) {
      q_proj[h].collect(out);
      k_proj[h].collect(out);
      v_proj[h].collect(out);
    }
    out_proj.collect(out);
    ffn1.collect(out);
    ffn2.collect(out);
    ln1.collect(out);
    ln2.collect(out);
  }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    std::vector<Tensor<S>> all;
    collect(all);
    for (const auto& t : all) n += t.size();
    return n;
  }
};

// --- initialization --------------------------------------------------------

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); row-major draw order.
template <typename S>
Tensor<S> glorot_uniform(Eigen::Index rows, Eigen::Index cols,
                         CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixX<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = static_cast<S>(rng.next_uniform(-limit, limit));
    }
  }
  return Tensor<S>::leaf(std::move(m), true);
}

template <typename S>
LinearParams<S> make_linear(Eigen::Index in, Eigen::Index out,
                            CounterRng& rng) {
  return LinearParams<S>{glorot_uniform<S>(in, out, rng),
                         Tensor<S>::leaf(MatrixX<S>::Zero(1, out), true)};
}

template <typename S>
LayerNormParams<S> make_layer_norm(Eigen::Index d) {
  return LayerNormParams<S>{Tensor<S>::leaf(MatrixX<S>::Ones(1, d), true),
                            Tensor<S>::leaf(MatrixX<S>::Zero(1, d), true)};
}

template <typename S>
EncoderLayerParams<S> make_encoder_layer(int model_dim, int ffn_dim,
                                         int head_count, double dropout_rate,
                                         CounterRng& rng) {
  if (head_count < 1 || model_dim % head_count != 0) {
    throw ValueError("encoder layer: model_dim " + std::to_string(model_dim) +
                     " not divisible by head_count " +
                     std::to_string(head_count));
  }
  EncoderLayerParams<S> p;
  p.head_count = head_count;
  p.model_dim = model_dim;
  p.ffn_dim = ffn_dim;
  p.dropout_rate = dropout_rate;
  const int d_head = model_dim / head_count;
  for (int h = 0; h < head_count; ++h) {
    p.q_proj.push_back(make_linear<S>(d_head, d_head, rng));
    p.k_proj.push_back(make_linear<S>(d_head, d_head, rng));
    p.v_proj.push_back(make_linear<S>(d_head, d_head, rng));
  }
  p.out_proj = make_linear<S>(model_dim, model_dim, rng);
  p.ffn1 = make_linear<S>(model_dim, ffn_dim, rng);
  p.ffn2 = make_linear<S>(ffn_dim, model_dim, rng);
  p.ln1 = make_layer_norm<S>(model_dim);
  p.ln2 = make_layer_norm<S>(model_dim);
  return p;
}

// --- forward ----------------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k) + mask bias) V. Masked key positions receive a
/// -1e9 additive bias, which drives their attention weight below 1e-6.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k,
                               const Tensor<S>& v, const PadMask& key_mask) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query/key widths disagree: " +
                     detail::shape_str(q.rows(), q.cols()) + " vs " +
                     detail::shape_str(k.rows(), k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: key/value counts disagree");
  }
  if (static_cast<Eigen::Index>(key_mask.size()) != k.rows()) {
    throw ShapeError("attention: mask length " +
                     std::to_string(key_mask.size()) + " vs " +
                     std::to_string(k.rows()) + " keys");
  }
  if (!mask_any(key_mask)) {
    throw UsageError("attention: every key position is masked");
  }
  const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(q.cols()));
  Tensor<S> scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  MatrixX<S> bias = MatrixX<S>::Zero(q.rows(), k.rows());
  for (Eigen::Index j = 0; j < k.rows(); ++j) {
    if (!key_mask[static_cast<std::size_t>(j)])
      bias.col(j).setConstant(static_cast<S>(kMaskBias));
  }
  Tensor<S> weights =
      softmax(add(scores, Tensor<S>::leaf(std::move(bias))), 1);
  return matmul(weights, v);
}

template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& x,
                               const EncoderLayerParams<S>& p,
                               const PadMask& mask) {
  if (x.cols() != p.model_dim) {
    throw ShapeError("multi_head_attention: expected width " +
                     std::to_string(p.model_dim) + ", got " +
                     detail::shape_str(x.rows(), x.cols()));
  }
  const int d_head = p.model_dim / p.head_count;
  std::vector<Tensor<S>> heads;
  heads.reserve(p.head_count);
  for (int h = 0; h < p.head_count; ++h) {
    Tensor<S> chunk = slice_cols(x, h * d_head, d_head);
    Tensor<S> q = linear(chunk, p.q_proj[h].w, p.q_proj[h].b);
    Tensor<S> k = linear(chunk, p.k_proj[h].w, p.k_proj[h].b);
    Tensor<S> v = linear(chunk, p.v_proj[h].w, p.v_proj[h].b);
    heads.push_back(scaled_dot_attention(q, k, v, mask));
  }
  Tensor<S> cat = p.head_count == 1 ? heads[0] : concat_cols(heads);
  return linear(cat, p.out_proj.w, p.out_proj.b);
}

/// Post-norm layer: y = LN(x + drop(MHA(x))); out = LN(y + drop(FFN(y))).
/// Padded rows are zeroed on output so stacking layers keeps them inert.
template <typename S>
Tensor<S> encoder_layer(const Tensor<S>& x, const EncoderLayerParams<S>& p,
                        const PadMask& mask, bool training = false,
                        CounterRng* rng = nullptr) {
  if (training && p.dropout_rate > 0.0 && rng == nullptr) {
    throw UsageError("encoder_layer: training with dropout requires an rng");
  }
  Tensor<S> attn = multi_head_attention(x, p, mask);
  if (training && p.dropout_rate > 0.0) {
    attn = dropout(attn, p.dropout_rate, *rng, true);
  }
  Tensor<S> y = layer_norm(add(x, attn), p.ln1.gain, p.ln1.bias,
                           static_cast<S>(kLayerNormEps));
  Tensor<S> f = linear(relu(linear(y, p.ffn1.w, p.ffn1.b)), p.ffn2.w, p.ffn2.b);
  if (training && p.dropout_rate > 0.0) {
    f = dropout(f, p.dropout_rate, *rng, true);
  }
  Tensor<S> out = layer_norm(add(y, f), p.ln2.gain, p.ln2.bias,
                             static_cast<S>(kLayerNormEps));
  return zero_masked_rows(out, mask);
}

template <typename S>
Tensor<S> encoder_stack(const Tensor<S>& x,
                        const std::vector<EncoderLayerParams<S>>& layers,
                        const PadMask& mask, bool training = false,
                        CounterRng* rng = nullptr) {
  Tensor<S> h = x;
  for (const auto& layer : layers) {
    h = encoder_layer(h, layer, mask, training, rng);
  }
  return h;
}

/// Sinusoidal positional encoding: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
/// PE[pos, 2i+1] = cos(pos / 10000^(2i/d)). Added to word embeddings only;
/// region sets are unordered and receive none.
template <typename S>
Tensor<S> positional_encoding(Eigen::Index length, Eigen::Index dim) {
  if (dim % 2 != 0) {
    throw ValueError("positional_encoding: dim must be even, got " +
                     std::to_string(dim));
  }
  MatrixX<S> pe(length, dim);
  for (Eigen::Index pos = 0; pos < length; ++pos) {
    for (Eigen::Index i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, (2.0 * static_cast<double>(i)) /
                                static_cast<double>(dim));
      pe(pos, 2 * i) = static_cast<S>(std::sin(angle));
      pe(pos, 2 * i + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return Tensor<S>::leaf(std::move(pe));
}

}  // namespace xaln
