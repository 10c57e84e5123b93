// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint: magic "XCKP", header with a structural
// config hash, all parameter tensors as little-endian 32-bit floats in
// row-major order, and an optional training-state block (optimizer moments,
// rng counter, epoch/step) so a resumed run replays the exact trajectory.

#pragma once

#include <string>
#include <vector>

#include "xaln/binio.hpp"
#include "xaln/model.hpp"
#include "xaln/objective.hpp"

namespace xaln {

inline constexpr char kCheckpointMagic[4] = {'X', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainState {
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t rng_counter = 0;
  double best_metric = -1.0;
  AdamState<float> adam;
};

/// FNV-1a 64 over the structural model configuration; a checkpoint only
/// loads into a model with the identical layout.
inline std::uint64_t config_hash(const ModelConfig& c) {
  std::string s = "d_v=" + std::to_string(c.d_v) +
                  ";d_geo=" + std::to_string(c.d_geo) +
                  ";d_t=" + std::to_string(c.d_t) +
                  ";model_dim=" + std::to_string(c.model_dim) +
                  ";common_dim=" + std::to_string(c.common_dim) +
                  ";ffn_dim=" + std::to_string(c.ffn_dim) +
                  ";head_count=" + std::to_string(c.head_count) +
                  ";visual_layers=" + std::to_string(c.visual_layers) +
                  ";textual_layers=" + std::to_string(c.textual_layers) +
                  ";final_layers=" + std::to_string(c.final_layers) +
                  ";vocab_size=" + std::to_string(c.vocab_size) +
                  ";max_regions=" + std::to_string(c.max_regions) +
                  ";share_final=" + std::to_string(c.share_final ? 1 : 0);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

inline void write_matrix(BinWriter& w, const MatrixX<float>& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
}

inline void read_matrix_into(BinReader& r, MatrixX<float>& m,
                             const std::string& what) {
  const std::size_t head = r.offset();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (rows != static_cast<std::uint32_t>(m.rows()) ||
      cols != static_cast<std::uint32_t>(m.cols())) {
    throw FormatError(r.path() + ": " + what + " has shape [" +
                          std::to_string(rows) + "x" + std::to_string(cols) +
                          "], model expects " +
                          xaln::detail::shape_str(m.rows(), m.cols()),
                      head);
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const ModelParams<float>& model,
                            const TrainState* state = nullptr) {
  BinWriter w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(config_hash(model.cfg));
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) detail::write_matrix(w, p.value());
  if (state == nullptr) {
    w.u32(0);
  } else {
    if (state->adam.m.size() != params.size()) {
      throw UsageError("save_checkpoint: optimizer state does not match parameters");
    }
    w.u32(1);
    w.u32(state->epoch);
    w.u64(state->step);
    w.u64(state->rng_counter);
    w.f64(state->best_metric);
    w.i64(state->adam.t);
    for (const auto& m : state->adam.m) detail::write_matrix(w, m);
    for (const auto& v : state->adam.v) detail::write_matrix(w, v);
  }
  w.close();
}

/// Loads parameter values (and the training-state block when present) into
/// an already-initialized model of the identical structure.
inline bool load_checkpoint(const std::string& path, ModelParams<float>& model,
                            TrainState* state = nullptr) {
  BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw FormatError(path + ": bad magic", 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version),
                      4);
  }
  const std::size_t hash_at = r.offset();
  const std::uint64_t hash = r.u64();
  if (hash != config_hash(model.cfg)) {
    throw ConfigError(path + ": checkpoint was written for a different model "
                      "configuration (hash mismatch at byte offset " +
                      std::to_string(hash_at) + ")");
  }
  auto params = model.parameters();
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw FormatError(path + ": parameter count " + std::to_string(count) +
                          ", model has " + std::to_string(params.size()),
                      count_at);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::read_matrix_into(r, params[i].value_mut(),
                             "parameter " + std::to_string(i));
  }
  const std::uint32_t has_state = r.u32();
  if (has_state != 0 && has_state != 1) {
    throw FormatError(path + ": bad training-state flag", r.offset() - 4);
  }
  if (has_state && state != nullptr) {
    state->epoch = r.u32();
    state->step = r.u64();
    state->rng_counter = r.u64();
    state->best_metric = r.f64();
    state->adam.t = r.i64();
    state->adam.m.assign(params.size(), MatrixX<float>());
    state->adam.v.assign(params.size(), MatrixX<float>());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state->adam.m[i] = MatrixX<float>::Zero(params[i].rows(), params[i].cols());
      detail::read_matrix_into(r, state->adam.m[i],
                               "adam m " + std::to_string(i));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      state->adam.v[i] = MatrixX<float>::Zero(params[i].rows(), params[i].cols());
      detail::read_matrix_into(r, state->adam.v[i],
                               "adam v " + std::to_string(i));
    }
  }
  return has_state == 1;
}

}  // namespace xaln
