// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared by the encoding pipelines and the alignment stage.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xaln/errors.hpp"
#include "xaln/mask.hpp"
#include "xaln/tensor.hpp"

namespace xaln {

/// Per-image set of detected region features with bounding-box geometry.
/// Boxes are (x1, y1, x2, y2) normalized to [0, 1].
template <typename S>
struct RegionSet {
  MatrixX<S> features;  // n x d_v
  MatrixX<S> boxes;     // n x 4
  PadMask mask;

  Eigen::Index count() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }

  void validate() const {
    if (features.rows() < 1) throw UsageError("region set: empty");
    if (boxes.rows() != features.rows() || boxes.cols() != 4) {
      throw ShapeError("region set: boxes must be [" +
                       std::to_string(features.rows()) + "x4]");
    }
    if (static_cast<Eigen::Index>(mask.size()) != features.rows()) {
      throw ShapeError("region set: mask length mismatch");
    }
    if (!mask_any(mask)) throw UsageError("region set: all regions masked");
    for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
      for (int j = 0; j < 4; ++j) {
        if (boxes(i, j) < S(0) || boxes(i, j) > S(1)) {
          throw ValueError("region set: box coordinate out of [0,1] at row " +
                           std::to_string(i));
        }
      }
      if (boxes(i, 2) < boxes(i, 0) || boxes(i, 3) < boxes(i, 1)) {
        throw ValueError("region set: degenerate box at row " +
                         std::to_string(i));
      }
    }
  }
};

/// Per-caption token sequence. stop_flags marks stop-words, which can be
/// excluded from pooling while still being encoded.
struct TokenSeq {
  std::vector<int> token_ids;
  PadMask mask;
  std::vector<std::uint8_t> stop_flags;

  std::size_t length() const { return token_ids.size(); }

  void validate(int vocab_size) const {
    if (token_ids.empty()) throw UsageError("token sequence: empty");
    if (mask.size() != token_ids.size() ||
        stop_flags.size() != token_ids.size()) {
      throw ShapeError("token sequence: mask/stop flag length mismatch");
    }
    if (!mask_any(mask)) throw UsageError("token sequence: all tokens masked");
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
      if (mask[i] && (token_ids[i] < 0 || token_ids[i] >= vocab_size)) {
        throw VocabError("token id " + std::to_string(token_ids[i]) +
                         " outside vocabulary of size " +
                         std::to_string(vocab_size));
      }
    }
  }
};

/// Output of either encoding pipeline: contextualized vectors in the common
/// space, one row per element, with the validity mask carried through.
template <typename S>
struct ContextualizedSet {
  Tensor<S> features;  // n x common_dim
  PadMask mask;
};

}  // namespace xaln
