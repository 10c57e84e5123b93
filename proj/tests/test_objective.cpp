// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "xaln/fdcheck.hpp"
#include "xaln/objective.hpp"
#include "xaln/rng.hpp"

using xaln::CounterRng;
using xaln::LossReduction;
using xaln::MatrixX;
using xaln::Tensor;

namespace {

// Independent reference: exhaustive argmax + direct hinge accumulation.
double brute_triplet_loss(const MatrixX<double>& s, double margin) {
  double total = 0;
  for (Eigen::Index k = 0; k < s.rows(); ++k) {
    double worst_col = -1e300, worst_row = -1e300;
    for (Eigen::Index d = 0; d < s.cols(); ++d) {
      if (d == k) continue;
      worst_col = std::max(worst_col, s(k, d));
      worst_row = std::max(worst_row, s(d, k));
    }
    total += std::max(0.0, margin + worst_col - s(k, k));
    total += std::max(0.0, margin + worst_row - s(k, k));
  }
  return total;
}

MatrixX<double> random_similarities(Eigen::Index b, CounterRng& rng) {
  MatrixX<double> s(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) s(i, j) = rng.next_uniform(-1, 1);
  return s;
}

}  // namespace

TEST_CASE("hard negatives on a 2x2 batch") {
  MatrixX<double> s(2, 2);
  s << 0.9, 0.1, 0.2, 0.8;
  auto neg = xaln::hard_negatives(s);
  CHECK(neg.col_neg[0] == 1);
  CHECK(neg.row_neg[0] == 1);
  CHECK(neg.col_neg[1] == 0);
  CHECK(neg.row_neg[1] == 0);

  MatrixX<double> tiny = MatrixX<double>::Zero(1, 1);
  MatrixX<double> rect = MatrixX<double>::Zero(2, 3);
  CHECK_THROWS_AS(xaln::hard_negatives(tiny), xaln::UsageError);
  CHECK_THROWS_AS(xaln::hard_negatives(rect), xaln::ShapeError);
}

TEST_CASE("hard negatives agree with exhaustive search up to 8x8") {
  CounterRng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Index b = 2 + static_cast<Eigen::Index>(rng.next_below(7));
    MatrixX<double> s = random_similarities(b, rng);
    auto neg = xaln::hard_negatives(s);
    for (Eigen::Index k = 0; k < b; ++k) {
      Eigen::Index bc = -1, br = -1;
      for (Eigen::Index d = 0; d < b; ++d) {
        if (d == k) continue;
        if (bc < 0 || s(k, d) > s(k, bc)) bc = d;
        if (br < 0 || s(d, k) > s(br, k)) br = d;
      }
      CHECK(neg.col_neg[k] == bc);
      CHECK(neg.row_neg[k] == br);
    }
  }
}

TEST_CASE("hard negative ties resolve to the lowest index") {
  MatrixX<double> s(3, 3);
  s.setConstant(0.4);
  s.diagonal().setConstant(0.9);
  auto neg = xaln::hard_negatives(s);
  CHECK(neg.col_neg[0] == 1);
  CHECK(neg.row_neg[0] == 1);
  CHECK(neg.col_neg[1] == 0);
  CHECK(neg.col_neg[2] == 0);
}

TEST_CASE("triplet loss hand oracles") {
  MatrixX<double> ideal(3, 3);
  ideal.setZero();
  ideal.diagonal().setConstant(1.0);
  auto cells = xaln::cells_from_matrix(ideal);
  CHECK(xaln::triplet_loss(cells, 0.2).item() == doctest::Approx(0.0));

  MatrixX<double> worked(2, 2);
  worked << 0.5, 0.6, 0.4, 0.5;
  CHECK(xaln::triplet_loss(xaln::cells_from_matrix(worked), 0.2).item() ==
        doctest::Approx(0.8));

  // Raising the diagonal by 1 saturates every hinge.
  MatrixX<double> easy = worked;
  easy.diagonal().array() += 1.0;
  CHECK(xaln::triplet_loss(xaln::cells_from_matrix(easy), 0.2).item() ==
        doctest::Approx(0.0));

  CHECK_THROWS_AS(
      xaln::triplet_loss(xaln::cells_from_matrix(worked), -0.1),
      xaln::ValueError);
}

TEST_CASE("triplet loss matches brute force on random batches up to 8x8") {
  CounterRng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Index b = 2 + static_cast<Eigen::Index>(rng.next_below(7));
    MatrixX<double> s = random_similarities(b, rng);
    double got = xaln::triplet_loss(xaln::cells_from_matrix(s), 0.2).item();
    CHECK(got == doctest::Approx(brute_triplet_loss(s, 0.2)).epsilon(1e-12));
    double mean =
        xaln::triplet_loss(xaln::cells_from_matrix(s), 0.2,
                           LossReduction::kMean)
            .item();
    CHECK(mean == doctest::Approx(got / static_cast<double>(b)));
  }
}

TEST_CASE("loss is zero exactly when every positive clears the margin") {
  CounterRng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixX<double> s = random_similarities(4, rng);
    double margin = 0.2;
    double loss = xaln::triplet_loss(xaln::cells_from_matrix(s), margin).item();
    bool all_clear = true;
    for (Eigen::Index k = 0; k < 4; ++k) {
      for (Eigen::Index d = 0; d < 4; ++d) {
        if (d == k) continue;
        if (s(k, k) - s(k, d) < margin || s(k, k) - s(d, k) < margin) {
          all_clear = false;
        }
      }
    }
    CHECK((loss == 0.0) == all_clear);
  }
}

TEST_CASE("loss is invariant to a constant shift of the whole matrix") {
  CounterRng rng(34);
  MatrixX<double> s = random_similarities(5, rng);
  double base = xaln::triplet_loss(xaln::cells_from_matrix(s), 0.2).item();
  MatrixX<double> shifted = s.array() + 3.7;
  double after =
      xaln::triplet_loss(xaln::cells_from_matrix(shifted), 0.2).item();
  CHECK(after == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("triplet loss gradient matches finite differences") {
  CounterRng rng(35);
  MatrixX<double> s = random_similarities(3, rng);
  auto leaf = Tensor<double>::leaf(s, true);
  auto r = xaln::check_gradients({leaf}, [&] {
    xaln::SimilarityCells<double> cells;
    cells.n_images = 3;
    cells.n_captions = 3;
    for (Eigen::Index k = 0; k < 3; ++k)
      for (Eigen::Index l = 0; l < 3; ++l) {
        // Route each matrix entry through a differentiable slice.
        auto row = xaln::slice_cols(leaf, l, 1);
        auto cell = xaln::slice_cols(xaln::transpose(row), k, 1);
        cells.cells.push_back(cell);
      }
    return xaln::triplet_loss(cells, 0.2);
  });
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, moments decay") {
  auto p = Tensor<double>::leaf(MatrixX<double>::Constant(1, 1, 2.5), true);
  std::vector<Tensor<double>> params{p};
  xaln::AdamState<double> state;
  state.init(params);
  state.m[0](0, 0) = 0.5;
  state.v[0](0, 0) = 0.25;

  p.zero_grad();
  // Parameter moves by the decayed momentum, not the (zero) gradient; with
  // zero momentum it must stay exactly put.
  xaln::AdamState<double> fresh;
  std::vector<Tensor<double>> params2{
      Tensor<double>::leaf(MatrixX<double>::Constant(1, 1, 2.5), true)};
  fresh.init(params2);
  params2[0].zero_grad();
  xaln::sgd_adam_step(params2, fresh, 0.1);
  CHECK(params2[0].value()(0, 0) == 2.5);
  CHECK(fresh.m[0](0, 0) == 0.0);

  xaln::sgd_adam_step(params, state, 0.1);
  CHECK(state.m[0](0, 0) == doctest::Approx(0.45));   // 0.9 * 0.5
  CHECK(state.v[0](0, 0) == doctest::Approx(0.24975));  // 0.999 * 0.25
}

TEST_CASE("adam: first-step magnitude is about lr regardless of scale") {
  for (double g : {1e-6, 1.0, 1e6}) {
    auto p = Tensor<double>::leaf(MatrixX<double>::Zero(1, 1), true);
    std::vector<Tensor<double>> params{p};
    xaln::AdamState<double> state;
    state.init(params);
    p.accumulate_grad(MatrixX<double>::Constant(1, 1, g));
    xaln::sgd_adam_step(params, state, 0.01);
    CHECK(std::abs(p.value()(0, 0)) ==
          doctest::Approx(0.01).epsilon(1e-2));
    CHECK(p.value()(0, 0) < 0.0);  // moves against the gradient
  }
  auto p = Tensor<double>::leaf(MatrixX<double>::Zero(1, 1), true);
  std::vector<Tensor<double>> params{p};
  xaln::AdamState<double> state;
  state.init(params);
  CHECK_THROWS_AS(xaln::sgd_adam_step(params, state, 0.0), xaln::ValueError);
}

TEST_CASE("adam: identical runs give bit-identical trajectories") {
  auto run = [] {
    CounterRng rng(77);
    auto p = Tensor<double>::leaf(MatrixX<double>::Constant(2, 2, 1.0), true);
    std::vector<Tensor<double>> params{p};
    xaln::AdamState<double> state;
    state.init(params);
    for (int step = 0; step < 25; ++step) {
      p.zero_grad();
      MatrixX<double> g(2, 2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) g(i, j) = rng.next_uniform(-1, 1);
      p.accumulate_grad(g);
      xaln::sgd_adam_step(params, state, 0.005);
    }
    return MatrixX<double>(p.value());
  };
  CHECK(run() == run());
}
