// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of reverse-mode gradients. The
// reference side only ever evaluates the forward pass at perturbed inputs,
// so it stays independent of the adjoint code it is checking.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xaln/tensor.hpp"

namespace xaln {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_site;
  std::size_t checked = 0;

  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

/// Compares tape gradients of `forward` (a callable rebuilding the scalar
/// loss from `leaves`) against central differences with step h.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator so
/// near-zero gradients are compared absolutely.
template <typename Forward>
GradCheckResult check_gradients(const std::vector<Tensor<double>>& leaves,
                                Forward&& forward, double h = 1e-5,
                                double denom_floor = 1e-6) {
  for (const auto& leaf : leaves) leaf.zero_grad();

  std::vector<MatrixX<double>> analytic;
  {
    Tape<double> tape;
    typename Tape<double>::Scope scope(tape);
    Tensor<double> loss = forward();
    tape.backward(loss);
  }
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheckResult result;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    for (Eigen::Index i = 0; i < leaf.rows(); ++i) {
      for (Eigen::Index j = 0; j < leaf.cols(); ++j) {
        const double saved = leaf.value()(i, j);
        leaf.value_mut()(i, j) = saved + h;
        const double up = forward().item();
        leaf.value_mut()(i, j) = saved - h;
        const double down = forward().item();
        leaf.value_mut()(i, j) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[li](i, j);
        const double denom =
            std::max({std::abs(a), std::abs(numeric), denom_floor});
        const double rel = std::abs(a - numeric) / denom;
        ++result.checked;
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_site = "leaf" + std::to_string(li) + "(" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ")";
        }
      }
    }
  }
  return result;
}

}  // namespace xaln
