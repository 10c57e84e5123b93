// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Hinge-based triplet ranking loss over a batch similarity matrix whose
// diagonal holds the positive pairs, with hard negatives mined inside the
// batch, plus the Adam update rule.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xaln/alignment.hpp"
#include "xaln/tensor.hpp"

namespace xaln {

struct HardNegatives {
  // col_neg[k] = argmax over d != k of S[k][d] (hardest caption for image k)
  // row_neg[k] = argmax over j != k of S[j][k] (hardest image for caption k)
  std::vector<Eigen::Index> col_neg;
  std::vector<Eigen::Index> row_neg;
};

/// Hardest in-batch negatives per positive (k, k); ties to lowest index.
template <typename S>
HardNegatives hard_negatives(const MatrixX<S>& s) {
  if (s.rows() != s.cols()) {
    throw ShapeError("hard_negatives: similarity matrix must be square, got " +
                     detail::shape_str(s.rows(), s.cols()));
  }
  const Eigen::Index b = s.rows();
  if (b < 2) {
    throw UsageError("hard_negatives: batch must have at least 2 items");
  }
  HardNegatives out;
  out.col_neg.resize(b);
  out.row_neg.resize(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    Eigen::Index best_col = -1, best_row = -1;
    for (Eigen::Index d = 0; d < b; ++d) {
      if (d == k) continue;
      if (best_col < 0 || s(k, d) > s(k, best_col)) best_col = d;
      if (best_row < 0 || s(d, k) > s(best_row, k)) best_row = d;
    }
    out.col_neg[k] = best_col;
    out.row_neg[k] = best_row;
  }
  return out;
}

enum class LossReduction { kSum, kMean };

inline std::string to_string(LossReduction r) {
  return r == LossReduction::kSum ? "sum" : "mean";
}

inline LossReduction reduction_from_string(const std::string& s) {
  if (s == "sum") return LossReduction::kSum;
  if (s == "mean") return LossReduction::kMean;
  throw ValueError("unknown loss reduction: " + s);
}

/// Wraps a plain score matrix in per-cell tensors, e.g. for loss tests.
template <typename S>
SimilarityCells<S> cells_from_matrix(const MatrixX<S>& m,
                                     bool requires_grad = false) {
  SimilarityCells<S> out;
  out.n_images = m.rows();
  out.n_captions = m.cols();
  for (Eigen::Index k = 0; k < m.rows(); ++k)
    for (Eigen::Index l = 0; l < m.cols(); ++l)
      out.cells.push_back(Tensor<S>::scalar(m(k, l), requires_grad));
  return out;
}

/// Sum over positives k of
///   [margin + S(k, l') - S(k, k)]_+  +  [margin + S(k', k) - S(k, k)]_+
/// with (k', l') the current forward pass's hardest in-batch negatives.
template <typename S>
Tensor<S> triplet_loss(const SimilarityCells<S>& s, S margin,
                       LossReduction reduction = LossReduction::kSum) {
  if (margin <= S(0)) {
    throw ValueError("triplet_loss: margin must be positive");
  }
  if (s.n_images != s.n_captions) {
    throw ShapeError("triplet_loss: batch similarities must be square");
  }
  const HardNegatives neg = hard_negatives(s.values());
  std::vector<Tensor<S>> hinges;
  hinges.reserve(2 * static_cast<std::size_t>(s.n_images));
  for (Eigen::Index k = 0; k < s.n_images; ++k) {
    const Tensor<S>& positive = s.at(k, k);
    hinges.push_back(
        relu(affine(sub(s.at(k, neg.col_neg[k]), positive), S(1), margin)));
    hinges.push_back(
        relu(affine(sub(s.at(neg.row_neg[k], k), positive), S(1), margin)));
  }
  Tensor<S> total = add_n(hinges);
  if (reduction == LossReduction::kMean) {
    total = scale(total, S(1) / static_cast<S>(s.n_images));
  }
  return total;
}

// --- Adam -------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<MatrixX<S>> m;
  std::vector<MatrixX<S>> v;
  std::int64_t t = 0;

  void init(const std::vector<Tensor<S>>& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& p : params) {
      m.push_back(MatrixX<S>::Zero(p.rows(), p.cols()));
      v.push_back(MatrixX<S>::Zero(p.rows(), p.cols()));
    }
  }
};

/// One bias-corrected Adam step using the gradients currently accumulated on
/// the parameter handles. Deterministic given identical state and gradients.
template <typename S>
void sgd_adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state,
                   double lr, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8) {
  if (lr <= 0.0) throw ValueError("adam: learning rate must be positive");
  if (state.m.size() != params.size()) {
    throw UsageError("adam: state not initialized for this parameter list");
  }
  state.t += 1;
  const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
  const S corr1 = S(1) - static_cast<S>(std::pow(beta1, state.t));
  const S corr2 = S(1) - static_cast<S>(std::pow(beta2, state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const MatrixX<S>& g = params[i].grad();
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g.cwiseProduct(g);
    MatrixX<S> m_hat = state.m[i] / corr1;
    MatrixX<S> v_hat = state.v[i] / corr2;
    params[i].value_mut() -=
        static_cast<S>(lr) *
        (m_hat.array() / (v_hat.array().sqrt() + static_cast<S>(eps)))
            .matrix();
  }
}

}  // namespace xaln
