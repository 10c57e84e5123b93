// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Dual encoding pipelines into a shared common space. The visual branch
// conditions region features with bounding-box geometry and reasons over the
// unordered set; the textual branch embeds tokens, mixes in positional
// encoding and reasons over the sequence. The two sides never exchange
// information before the alignment stage, so either modality can be encoded
// and cached on its own.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xaln/encoder.hpp"
#include "xaln/types.hpp"

namespace xaln {

struct ModelConfig {
  int d_v = 2048;        // raw region feature width
  int d_geo = 128;       // geometry MLP hidden width
  int d_t = 768;         // word embedding width
  int model_dim = 1024;  // visual reasoning width
  int common_dim = 1024; // shared space width
  int ffn_dim = 2048;
  int head_count = 8;
  int visual_layers = 4;
  int textual_layers = 2;
  int final_layers = 2;
  int vocab_size = 0;
  int max_regions = 36;
  bool share_final = false;
  double dropout = 0.1;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1)
        throw ConfigError(std::string("model config: ") + name +
                          " must be positive");
    };
    positive(d_v, "d_v");
    positive(d_geo, "d_geo");
    positive(d_t, "d_t");
    positive(model_dim, "model_dim");
    positive(common_dim, "common_dim");
    positive(ffn_dim, "ffn_dim");
    positive(head_count, "head_count");
    positive(vocab_size, "vocab_size");
    positive(max_regions, "max_regions");
    if (visual_layers < 0 || textual_layers < 0 || final_layers < 0) {
      throw ConfigError("model config: layer counts must be non-negative");
    }
    if (d_t % 2 != 0) {
      throw ConfigError("model config: d_t must be even for the positional encoding");
    }
    if (model_dim % head_count != 0 || d_t % head_count != 0 ||
        common_dim % head_count != 0) {
      throw ConfigError("model config: head_count must divide model_dim, d_t and common_dim");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError("model config: dropout must be in [0,1)");
    }
  }
};

struct EncodeCounters {
  std::uint64_t region_calls = 0;
  std::uint64_t word_calls = 0;
};

template <typename S>
struct ModelParams {
  ModelConfig cfg;
  LinearParams<S> geo1, geo2;                        // 7 -> d_geo -> d_v
  LinearParams<S> vis_in;                            // d_v -> model_dim
  std::vector<EncoderLayerParams<S>> visual_stack;   // model_dim
  Tensor<S> embedding;                               // vocab x d_t
  std::vector<EncoderLayerParams<S>> textual_stack;  // d_t
  LinearParams<S> vis_proj;                          // model_dim -> common
  LinearParams<S> txt_proj;                          // d_t -> common
  std::vector<EncoderLayerParams<S>> final_visual;   // common
  std::vector<EncoderLayerParams<S>> final_textual;  // aliases final_visual
                                                     // when cfg.share_final
  mutable EncodeCounters counters;

  /// Every distinct parameter tensor, in a fixed order. A shared final
  /// stack is enumerated once.
  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    geo1.collect(out);
    geo2.collect(out);
    vis_in.collect(out);
    for (const auto& l : visual_stack) l.collect(out);
    out.push_back(embedding);
    for (const auto& l : textual_stack) l.collect(out);
    vis_proj.collect(out);
    txt_proj.collect(out);
    for (const auto& l : final_visual) l.collect(out);
    if (!cfg.share_final) {
      for (const auto& l : final_textual) l.collect(out);
    }
    return out;
  }

  void zero_grad() const {
    for (const auto& p : parameters()) p.zero_grad();
  }
};

/// Exact number of scalar parameters; weight sharing removes one final
/// stack from the count.
template <typename S>
Eigen::Index count_parameters(const ModelParams<S>& p) {
  Eigen::Index n = 0;
  for (const auto& t : p.parameters()) n += t.size();
  return n;
}

/// Initializes all weights in a fixed draw order from the given generator.
template <typename S>
ModelParams<S> init_model(const ModelConfig& cfg, CounterRng& rng) {
  cfg.validate();
  ModelParams<S> p;
  p.cfg = cfg;
  p.geo1 = make_linear<S>(7, cfg.d_geo, rng);
  p.geo2 = make_linear<S>(cfg.d_geo, cfg.d_v, rng);
  p.vis_in = make_linear<S>(cfg.d_v, cfg.model_dim, rng);
  for (int i = 0; i < cfg.visual_layers; ++i) {
    p.visual_stack.push_back(make_encoder_layer<S>(
        cfg.model_dim, cfg.ffn_dim, cfg.head_count, cfg.dropout, rng));
  }
  p.embedding = glorot_uniform<S>(cfg.vocab_size, cfg.d_t, rng);
  for (int i = 0; i < cfg.textual_layers; ++i) {
    p.textual_stack.push_back(make_encoder_layer<S>(
        cfg.d_t, cfg.ffn_dim, cfg.head_count, cfg.dropout, rng));
  }
  p.vis_proj = make_linear<S>(cfg.model_dim, cfg.common_dim, rng);
  p.txt_proj = make_linear<S>(cfg.d_t, cfg.common_dim, rng);
  for (int i = 0; i < cfg.final_layers; ++i) {
    p.final_visual.push_back(make_encoder_layer<S>(
        cfg.common_dim, cfg.ffn_dim, cfg.head_count, cfg.dropout, rng));
  }
  if (cfg.share_final) {
    p.final_textual = p.final_visual;  // same tensor handles
  } else {
    for (int i = 0; i < cfg.final_layers; ++i) {
      p.final_textual.push_back(make_encoder_layer<S>(
          cfg.common_dim, cfg.ffn_dim, cfg.head_count, cfg.dropout, rng));
    }
  }
  return p;
}

/// Differentiable embedding lookup: one table row per id.
template <typename S>
Tensor<S> embed(const Tensor<S>& table, const std::vector<int>& ids) {
  MatrixX<S> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw VocabError("token id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " +
                       std::to_string(table.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return custom_op<S>(std::move(out), table.requires_grad(),
                      [&](const Tensor<S>& res) {
                        return [table, res, ids] {
                          if (!res.has_grad()) return;
                          const MatrixX<S>& g = res.grad();
                          MatrixX<S> gt =
                              MatrixX<S>::Zero(table.rows(), table.cols());
                          for (std::size_t i = 0; i < ids.size(); ++i) {
                            gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                          }
                          table.accumulate_grad(gt);
                        };
                      });
}

/// (x1, y1, x2, y2, w, h, area) per region, as a constant input.
template <typename S>
Tensor<S> geometry_features(const MatrixX<S>& boxes) {
  MatrixX<S> g(boxes.rows(), 7);
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
    const S w = boxes(i, 2) - boxes(i, 0);
    const S h = boxes(i, 3) - boxes(i, 1);
    g(i, 0) = boxes(i, 0);
    g(i, 1) = boxes(i, 1);
    g(i, 2) = boxes(i, 2);
    g(i, 3) = boxes(i, 3);
    g(i, 4) = w;
    g(i, 5) = h;
    g(i, 6) = w * h;
  }
  return Tensor<S>::leaf(std::move(g));
}

/// Visual pipeline: geometry-conditioned features -> input projection ->
/// reasoning stack -> common-space projection -> final stack. No positional
/// encoding: region sets are unordered.
template <typename S>
ContextualizedSet<S> encode_regions(const RegionSet<S>& r,
                                    const ModelParams<S>& p,
                                    bool training = false,
                                    CounterRng* rng = nullptr) {
  r.validate();
  if (r.feature_dim() != p.cfg.d_v) {
    throw ShapeError("encode_regions: feature width " +
                     std::to_string(r.feature_dim()) + " but model expects " +
                     std::to_string(p.cfg.d_v));
  }
  if (r.count() > p.cfg.max_regions) {
    throw UsageError("encode_regions: " + std::to_string(r.count()) +
                     " regions exceed max_regions " +
                     std::to_string(p.cfg.max_regions));
  }
  Tensor<S> feats = Tensor<S>::leaf(r.features);
  Tensor<S> geom = geometry_features<S>(r.boxes);
  Tensor<S> cond = linear(relu(linear(geom, p.geo1.w, p.geo1.b)), p.geo2.w,
                          p.geo2.b);
  Tensor<S> x = add(feats, cond);
  x = linear(x, p.vis_in.w, p.vis_in.b);
  x = encoder_stack(x, p.visual_stack, r.mask, training, rng);
  x = linear(x, p.vis_proj.w, p.vis_proj.b);
  x = encoder_stack(x, p.final_visual, r.mask, training, rng);
  x = zero_masked_rows(x, r.mask);
  ++p.counters.region_calls;
  return ContextualizedSet<S>{x, r.mask};
}

/// Textual pipeline: embedding lookup + positional encoding -> reasoning
/// stack -> common-space projection -> final stack.
template <typename S>
ContextualizedSet<S> encode_words(const TokenSeq& c, const ModelParams<S>& p,
                                  bool training = false,
                                  CounterRng* rng = nullptr) {
  c.validate(p.cfg.vocab_size);
  Tensor<S> e = embed(p.embedding, c.token_ids);
  e = add(e, positional_encoding<S>(e.rows(), p.cfg.d_t));
  e = encoder_stack(e, p.textual_stack, c.mask, training, rng);
  e = linear(e, p.txt_proj.w, p.txt_proj.b);
  e = encoder_stack(e, p.final_textual, c.mask, training, rng);
  e = zero_masked_rows(e, c.mask);
  ++p.counters.word_calls;
  return ContextualizedSet<S>{e, c.mask};
}

}  // namespace xaln
