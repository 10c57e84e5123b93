// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "xaln/encoder.hpp"
#include "xaln/fdcheck.hpp"

using xaln::CounterRng;
using xaln::EncoderLayerParams;
using xaln::MatrixX;
using xaln::PadMask;
using xaln::Tensor;

namespace {

Tensor<double> random_tensor(Eigen::Index r, Eigen::Index c, CounterRng& rng,
                             bool requires_grad = false) {
  MatrixX<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.next_uniform(-1, 1);
  return Tensor<double>::leaf(std::move(m), requires_grad);
}

MatrixX<double> permute_rows(const MatrixX<double>& x,
                             const std::vector<int>& perm) {
  MatrixX<double> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[i]);
  return out;
}

}  // namespace

TEST_CASE("attention: single unmasked key forces weight one") {
  CounterRng rng(1);
  auto q = random_tensor(3, 4, rng);
  auto k = random_tensor(2, 4, rng);
  auto v = random_tensor(2, 4, rng);
  PadMask mask{0, 1};
  auto out = xaln::scaled_dot_attention(q, k, v, mask);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    CHECK((out.value().row(i) - v.value().row(1)).cwiseAbs().maxCoeff() <
          1e-6);
  }
}

TEST_CASE("attention: identical keys give uniform weights") {
  CounterRng rng(2);
  MatrixX<double> k = MatrixX<double>::Ones(3, 2);
  auto q = random_tensor(2, 2, rng);
  auto v = random_tensor(3, 5, rng);
  auto out = xaln::scaled_dot_attention(q, Tensor<double>::leaf(k), v,
                                        xaln::full_mask(3));
  MatrixX<double> mean_row = v.value().colwise().mean();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    CHECK((out.value().row(i) - mean_row.row(0)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("attention: closed-form softmax weights") {
  MatrixX<double> q(1, 1), k(2, 1);
  q << 1;
  k << 0, 1;
  auto out = xaln::scaled_dot_attention(
      Tensor<double>::leaf(q), Tensor<double>::leaf(k),
      Tensor<double>::leaf(MatrixX<double>::Identity(2, 2)),
      xaln::full_mask(2));
  CHECK(out.value()(0, 0) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(out.value()(0, 1) == doctest::Approx(0.7311).epsilon(1e-3));
}

TEST_CASE("attention: masked keys get weight below 1e-6, all-masked throws") {
  CounterRng rng(3);
  auto q = random_tensor(2, 3, rng);
  auto k = random_tensor(4, 3, rng);
  PadMask mask{1, 0, 1, 0};
  // Read the weights directly by using an identity value matrix.
  auto w = xaln::scaled_dot_attention(
      q, k, Tensor<double>::leaf(MatrixX<double>::Identity(4, 4)), mask);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double unmasked_sum = 0;
    for (int j = 0; j < 4; ++j) {
      if (mask[j])
        unmasked_sum += w.value()(i, j);
      else
        CHECK(w.value()(i, j) < 1e-6);
    }
    CHECK(std::abs(unmasked_sum - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(
      xaln::scaled_dot_attention(q, k, k, PadMask{0, 0, 0, 0}),
      xaln::UsageError);
}

TEST_CASE("multi-head attention: one head is projected attention, shape kept") {
  CounterRng rng(4);
  auto p = xaln::make_encoder_layer<double>(6, 8, 1, 0.0, rng);
  auto x = random_tensor(5, 6, rng);
  auto mask = xaln::full_mask(5);
  auto out = xaln::multi_head_attention(x, p, mask);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 6);

  auto q = xaln::linear(x, p.q_proj[0].w, p.q_proj[0].b);
  auto k = xaln::linear(x, p.k_proj[0].w, p.k_proj[0].b);
  auto v = xaln::linear(x, p.v_proj[0].w, p.v_proj[0].b);
  auto direct = xaln::linear(xaln::scaled_dot_attention(q, k, v, mask),
                             p.out_proj.w, p.out_proj.b);
  CHECK((out.value() - direct.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("multi-head attention: permutation equivariance without PE") {
  CounterRng rng(5);
  auto p = xaln::make_encoder_layer<double>(8, 12, 2, 0.0, rng);
  auto x = random_tensor(4, 8, rng);
  std::vector<int> perm{2, 0, 3, 1};
  auto xp = Tensor<double>::leaf(permute_rows(x.value(), perm));
  auto y = xaln::multi_head_attention(x, p, xaln::full_mask(4));
  auto yp = xaln::multi_head_attention(xp, p, xaln::full_mask(4));
  CHECK((yp.value() - permute_rows(y.value(), perm)).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("encoder layer: shape preserved, head count must divide dim") {
  CounterRng rng(6);
  auto p = xaln::make_encoder_layer<double>(8, 16, 4, 0.0, rng);
  auto x = random_tensor(3, 8, rng);
  auto out = xaln::encoder_layer(x, p, xaln::full_mask(3));
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 8);
  CHECK_THROWS_AS(xaln::make_encoder_layer<double>(7, 16, 2, 0.0, rng),
                  xaln::ValueError);
}

TEST_CASE("encoder stack: padded positions are inert") {
  CounterRng rng(7);
  std::vector<EncoderLayerParams<double>> layers;
  layers.push_back(xaln::make_encoder_layer<double>(6, 10, 2, 0.0, rng));
  layers.push_back(xaln::make_encoder_layer<double>(6, 10, 3, 0.0, rng));

  auto x = random_tensor(3, 6, rng);
  auto base = xaln::encoder_stack(x, layers, xaln::full_mask(3));

  // Append two padded rows with arbitrary content; real outputs must agree.
  MatrixX<double> padded(5, 6);
  padded.topRows(3) = x.value();
  padded.row(3).setConstant(3.7);
  padded.row(4).setConstant(-2.2);
  PadMask mask{1, 1, 1, 0, 0};
  auto out = xaln::encoder_stack(Tensor<double>::leaf(padded), layers, mask);
  CHECK((out.value().topRows(3) - base.value()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(out.value().bottomRows(2).isZero(0.0));

  // Changing padded content leaves unmasked outputs unchanged.
  padded.row(3).setConstant(-41.0);
  auto out2 = xaln::encoder_stack(Tensor<double>::leaf(padded), layers, mask);
  CHECK((out2.value().topRows(3) - base.value()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("encoder stack: permutation equivariant over unmasked positions") {
  CounterRng rng(8);
  std::vector<EncoderLayerParams<double>> layers;
  layers.push_back(xaln::make_encoder_layer<double>(6, 8, 2, 0.0, rng));
  layers.push_back(xaln::make_encoder_layer<double>(6, 8, 2, 0.0, rng));
  auto x = random_tensor(5, 6, rng);
  std::vector<int> perm{4, 2, 0, 1, 3};
  auto y = xaln::encoder_stack(x, layers, xaln::full_mask(5));
  auto yp = xaln::encoder_stack(Tensor<double>::leaf(permute_rows(x.value(), perm)),
                                layers, xaln::full_mask(5));
  CHECK((yp.value() - permute_rows(y.value(), perm)).cwiseAbs().maxCoeff() <
        1e-6);
}

TEST_CASE("encoder layer and 2-layer stack pass finite differences") {
  CounterRng rng(9);
  auto p1 = xaln::make_encoder_layer<double>(4, 6, 2, 0.0, rng);
  auto p2 = xaln::make_encoder_layer<double>(4, 6, 1, 0.0, rng);
  auto x = random_tensor(3, 4, rng, true);
  PadMask mask{1, 1, 0};

  std::vector<Tensor<double>> leaves{x};
  p1.collect(leaves);
  p2.collect(leaves);

  auto r = xaln::check_gradients(leaves, [&] {
    auto h = xaln::encoder_layer(x, p1, mask);
    h = xaln::encoder_layer(h, p2, mask);
    return xaln::sum(h);
  });
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("positional encoding closed forms") {
  auto pe = xaln::positional_encoding<double>(4, 6);
  CHECK(pe.rows() == 4);
  CHECK(pe.cols() == 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(pe.value()(0, 2 * i) == doctest::Approx(0.0));
    CHECK(pe.value()(0, 2 * i + 1) == doctest::Approx(1.0));
  }
  CHECK(pe.value()(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe.value()(1, 0) == doctest::Approx(0.8415).epsilon(1e-3));
  CHECK(pe.value().maxCoeff() <= 1.0);
  CHECK(pe.value().minCoeff() >= -1.0);
  CHECK_THROWS_AS(xaln::positional_encoding<double>(4, 5), xaln::ValueError);
}

TEST_CASE("dropout draws happen in deterministic program order inside layers") {
  CounterRng rng(10);
  auto p = xaln::make_encoder_layer<double>(4, 6, 2, 0.3, rng);
  auto x = random_tensor(3, 4, rng);
  CounterRng d1(77), d2(77);
  auto a = xaln::encoder_layer(x, p, xaln::full_mask(3), true, &d1);
  auto b = xaln::encoder_layer(x, p, xaln::full_mask(3), true, &d2);
  CHECK(a.value() == b.value());
  CHECK(d1.counter() == d2.counter());
}
