// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense matrix values with reverse-mode differentiation on a Wengert tape.
// A Tensor is a shared handle over an Eigen matrix plus an additive gradient
// buffer. Operations are free functions that compute eagerly and, while a
// Tape is active, record an adjoint closure for the backward sweep. Scalars
// are 1x1, vectors are 1xN or Nx1.

#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xaln/errors.hpp"
#include "xaln/mask.hpp"
#include "xaln/rng.hpp"

namespace xaln {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {
inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}
}  // namespace detail

/// Value node. Copies share storage; gradients accumulate additively into
/// the shared buffer until zero_grad().
template <typename S>
class Tensor {
 public:
  using Matrix = MatrixX<S>;

  Tensor() = default;

  static Tensor leaf(Matrix value, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->value = std::move(value);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return leaf(std::move(m), requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  Eigen::Index rows() const { return d_->value.rows(); }
  Eigen::Index cols() const { return d_->value.cols(); }
  Eigen::Index size() const { return d_->value.size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  const Matrix& value() const { return d_->value; }
  Matrix& value_mut() { return d_->value; }

  S item() const {
    if (!is_scalar()) {
      throw UsageError("item(): tensor is not scalar, shape " +
                       detail::shape_str(rows(), cols()));
    }
    return d_->value(0, 0);
  }

  bool requires_grad() const { return d_->requires_grad; }
  bool recorded() const { return d_->recorded; }
  bool has_grad() const { return d_->grad.size() > 0; }

  /// Gradient buffer; allocated as zeros on first access.
  const Matrix& grad() const {
    ensure_grad();
    return d_->grad;
  }

  template <typename Expr>
  void accumulate_grad(const Expr& g) const {
    ensure_grad();
    d_->grad += g;
  }

  void zero_grad() const {
    if (d_->grad.size() > 0) d_->grad.setZero();
  }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  struct Data {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool recorded = false;  // produced by an op while a tape was active
  };

  void ensure_grad() const {
    if (d_->grad.size() == 0) d_->grad = Matrix::Zero(rows(), cols());
  }

  void mark_recorded() {
    d_->requires_grad = true;
    d_->recorded = true;
  }

  std::shared_ptr<Data> d_;

  template <typename T, typename MakeAdjoint>
  friend Tensor<T> custom_op(MatrixX<T> value, bool track,
                             MakeAdjoint&& make_adjoint);
};

/// Ordered record of executed primitive operations. backward() replays the
/// adjoints in reverse execution order (a valid topological order of the
/// recorded graph). Leaf gradients accumulate across backward calls;
/// gradients of recorded intermediates are reset at the start of each call,
/// so running backward twice without zero_grad doubles every leaf gradient.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// RAII activation; ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_; }

  void record(Tensor<S> result, std::function<void()> adjoint) {
    entries_.push_back(Entry{std::move(result), std::move(adjoint)});
  }

  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order.
  void backward(const Tensor<S>& loss) {
    if (!loss.is_scalar()) {
      throw UsageError("backward: loss must be scalar, got shape " +
                       detail::shape_str(loss.rows(), loss.cols()));
    }
    if (!loss.recorded()) {
      throw UsageError("backward: loss is not on the tape");
    }
    for (auto& e : entries_) e.result.zero_grad();
    loss.accumulate_grad(MatrixX<S>::Ones(1, 1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->adjoint();
    }
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor<S> result;
    std::function<void()> adjoint;
  };

  static thread_local Tape* current_;
  std::vector<Entry> entries_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

/// Free-function backward on the innermost active tape.
template <typename S>
void backward(const Tensor<S>& loss) {
  Tape<S>* tape = Tape<S>::current();
  if (!tape) throw UsageError("backward: no active tape");
  tape->backward(loss);
}

/// Builds an op result and records its adjoint. `make_adjoint` receives the
/// output handle and returns the closure to run during the backward sweep.
/// This is the extension point modules use for their own differentiable ops.
template <typename S, typename MakeAdjoint>
Tensor<S> custom_op(MatrixX<S> value, bool track, MakeAdjoint&& make_adjoint) {
  Tensor<S> out = Tensor<S>::leaf(std::move(value), false);
  Tape<S>* tape = Tape<S>::current();
  if (tape && track) {
    out.mark_recorded();
    tape->record(out, make_adjoint(out));
  }
  return out;
}

namespace debug {
/// Test hook: when set, relu's adjoint is deliberately scaled so that
/// finite-difference verification must report a failure.
inline std::atomic<bool> corrupt_relu_adjoint{false};
}  // namespace debug

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " +
                     detail::shape_str(a.rows(), a.cols()) + " * " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  return custom_op<S>(a.value() * b.value(),
                      a.requires_grad() || b.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [a, b, out] {
                          if (!out.has_grad()) return;
                          const MatrixX<S>& g = out.grad();
                          if (a.requires_grad())
                            a.accumulate_grad(g * b.value().transpose());
                          if (b.requires_grad())
                            b.accumulate_grad(a.value().transpose() * g);
                        };
                      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  return custom_op<S>(x.value().transpose(), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out] {
                          if (!out.has_grad()) return;
                          x.accumulate_grad(out.grad().transpose());
                        };
                      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: shape mismatch: " +
                     detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  return custom_op<S>(a.value() + b.value(),
                      a.requires_grad() || b.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [a, b, out] {
                          if (!out.has_grad()) return;
                          if (a.requires_grad()) a.accumulate_grad(out.grad());
                          if (b.requires_grad()) b.accumulate_grad(out.grad());
                        };
                      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("sub: shape mismatch: " +
                     detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  return custom_op<S>(a.value() - b.value(),
                      a.requires_grad() || b.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [a, b, out] {
                          if (!out.has_grad()) return;
                          if (a.requires_grad()) a.accumulate_grad(out.grad());
                          if (b.requires_grad()) b.accumulate_grad(-out.grad());
                        };
                      });
}

/// x[n x d] + broadcast row b[1 x d].
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw ShapeError("add_rowwise: bias must be [1x" +
                     std::to_string(x.cols()) + "], got " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  MatrixX<S> v = x.value();
  v.rowwise() += b.value().row(0);
  return custom_op<S>(std::move(v), x.requires_grad() || b.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, b, out] {
                          if (!out.has_grad()) return;
                          if (x.requires_grad()) x.accumulate_grad(out.grad());
                          if (b.requires_grad())
                            b.accumulate_grad(out.grad().colwise().sum());
                        };
                      });
}

/// Elementwise alpha * x + beta.
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S alpha, S beta) {
  return custom_op<S>(
      (x.value().array() * alpha + beta).matrix(), x.requires_grad(),
      [&](const Tensor<S>& out) {
        return [x, out, alpha] {
          if (!out.has_grad()) return;
          x.accumulate_grad(out.grad() * alpha);
        };
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return affine(x, c, S(0));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return custom_op<S>(x.value().cwiseMax(S(0)), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out] {
                          if (!out.has_grad()) return;
                          MatrixX<S> g =
                              (x.value().array() > S(0))
                                  .select(out.grad(),
                                          MatrixX<S>::Zero(x.rows(), x.cols()));
                          if (debug::corrupt_relu_adjoint.load())
                            g *= S(1.01);
                          x.accumulate_grad(g);
                        };
                      });
}

/// Softmax along `axis` (1 = within each row, 0 = within each column),
/// computed with max-subtraction.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = 1) {
  if (axis != 0 && axis != 1) {
    throw ValueError("softmax: axis must be 0 or 1, got " +
                     std::to_string(axis));
  }
  if (!x.value().allFinite()) {
    throw ValueError("softmax: input contains non-finite values");
  }
  MatrixX<S> y(x.rows(), x.cols());
  if (axis == 1) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto row = x.value().row(i).array();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (row - row.maxCoeff()).exp();
      y.row(i) = (e / e.sum()).matrix();
    }
  } else {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      auto col = x.value().col(j).array();
      Eigen::Array<S, Eigen::Dynamic, 1> e = (col - col.maxCoeff()).exp();
      y.col(j) = (e / e.sum()).matrix();
    }
  }
  return custom_op<S>(std::move(y), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out, axis] {
                          if (!out.has_grad()) return;
                          const MatrixX<S>& g = out.grad();
                          const MatrixX<S>& yv = out.value();
                          MatrixX<S> gx(yv.rows(), yv.cols());
                          if (axis == 1) {
                            for (Eigen::Index i = 0; i < yv.rows(); ++i) {
                              S dot = g.row(i).cwiseProduct(yv.row(i)).sum();
                              gx.row(i) = yv.row(i).cwiseProduct(
                                  g.row(i) -
                                  MatrixX<S>::Constant(1, yv.cols(), dot));
                            }
                          } else {
                            for (Eigen::Index j = 0; j < yv.cols(); ++j) {
                              S dot = g.col(j).cwiseProduct(yv.col(j)).sum();
                              gx.col(j) = yv.col(j).cwiseProduct(
                                  g.col(j) -
                                  MatrixX<S>::Constant(yv.rows(), 1, dot));
                            }
                          }
                          x.accumulate_grad(gx);
                        };
                      });
}

/// Row-wise layer normalization over the feature axis (columns), with a
/// per-feature affine: y = gain * (x - mean) / sqrt(var + eps) + bias.
/// Variance is the population variance of the row.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps) {
  const Eigen::Index d = x.cols();
  if (d < 1) throw ShapeError("layer_norm: normalized axis length must be >= 1");
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 ||
      bias.cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be [1x" + std::to_string(d) +
                     "], got " + detail::shape_str(gain.rows(), gain.cols()) +
                     " and " + detail::shape_str(bias.rows(), bias.cols()));
  }
  auto xhat = std::make_shared<MatrixX<S>>(x.rows(), d);
  auto inv_std = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(x.rows());
  MatrixX<S> y(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto row = x.value().row(i).array();
    S mu = row.mean();
    S var = (row - mu).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = ((row - mu) * is).matrix();
    y.row(i) = xhat->row(i).cwiseProduct(gain.value().row(0)) +
               bias.value().row(0);
  }
  bool track = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return custom_op<S>(std::move(y), track, [&](const Tensor<S>& out) {
    return [x, gain, bias, out, xhat, inv_std] {
      if (!out.has_grad()) return;
      const MatrixX<S>& g = out.grad();
      if (bias.requires_grad()) bias.accumulate_grad(g.colwise().sum());
      if (gain.requires_grad())
        gain.accumulate_grad(g.cwiseProduct(*xhat).colwise().sum());
      if (x.requires_grad()) {
        MatrixX<S> gx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          auto dxhat =
              (g.row(i).cwiseProduct(gain.value().row(0))).array();
          auto xh = xhat->row(i).array();
          S m1 = dxhat.mean();
          S m2 = (dxhat * xh).mean();
          gx.row(i) = ((dxhat - m1 - xh * m2) * (*inv_std)(i)).matrix();
        }
        x.accumulate_grad(gx);
      }
    };
  });
}

/// Inverted dropout: in training mode each element is zeroed independently
/// with probability `rate` and survivors are scaled by 1/(1-rate); in eval
/// mode (or at rate 0) the input passes through untouched and no random
/// draws are consumed. Mask draws happen in row-major element order.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, CounterRng& rng,
                  bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValueError("dropout: rate must be in [0,1), got " +
                     std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<MatrixX<S>>(x.rows(), x.cols());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      (*mask)(i, j) = rng.next_uniform() >= rate ? keep_scale : S(0);
    }
  }
  return custom_op<S>(x.value().cwiseProduct(*mask), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out, mask] {
                          if (!out.has_grad()) return;
                          x.accumulate_grad(out.grad().cwiseProduct(*mask));
                        };
                      });
}

/// Cosine similarity of two same-length vectors (1xd or dx1), eps-guarded
/// against zero norms: u.v / (max(|u|,eps) * max(|v|,eps)).
template <typename S>
Tensor<S> cosine(const Tensor<S>& u, const Tensor<S>& v, S eps = S(1e-8)) {
  if (u.rows() != 1 && u.cols() != 1)
    throw ShapeError("cosine: u must be a vector, got " +
                     detail::shape_str(u.rows(), u.cols()));
  if (v.rows() != 1 && v.cols() != 1)
    throw ShapeError("cosine: v must be a vector, got " +
                     detail::shape_str(v.rows(), v.cols()));
  if (u.size() != v.size() || u.size() < 1) {
    throw ShapeError("cosine: lengths disagree: " +
                     std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  }
  using Vec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;
  Vec uv(u.value().data(), u.size());
  Vec vv(v.value().data(), v.size());
  const S nu_raw = uv.norm(), nv_raw = vv.norm();
  const S nu = std::max(nu_raw, eps), nv = std::max(nv_raw, eps);
  const S dot = uv.dot(vv);
  const S c = dot / (nu * nv);
  MatrixX<S> val(1, 1);
  val(0, 0) = c;
  return custom_op<S>(
      std::move(val), u.requires_grad() || v.requires_grad(),
      [&](const Tensor<S>& out) {
        return [u, v, out, nu, nv, nu_raw, nv_raw, c, eps] {
          if (!out.has_grad()) return;
          const S g = out.grad()(0, 0);
          Vec uv2(u.value().data(), u.size());
          Vec vv2(v.value().data(), v.size());
          if (u.requires_grad()) {
            Eigen::Matrix<S, Eigen::Dynamic, 1> du = vv2 / (nu * nv);
            if (nu_raw > eps) du -= (c / (nu * nu)) * uv2;
            Eigen::Map<MatrixX<S>> dum(du.data(), u.rows(), u.cols());
            u.accumulate_grad(dum * g);
          }
          if (v.requires_grad()) {
            Eigen::Matrix<S, Eigen::Dynamic, 1> dv = uv2 / (nu * nv);
            if (nv_raw > eps) dv -= (c / (nv * nv)) * vv2;
            Eigen::Map<MatrixX<S>> dvm(dv.data(), v.rows(), v.cols());
            v.accumulate_grad(dvm * g);
          }
        };
      });
}

/// Sum of all elements, as a 1x1 tensor.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  MatrixX<S> v(1, 1);
  v(0, 0) = x.value().sum();
  return custom_op<S>(std::move(v), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out] {
                          if (!out.has_grad()) return;
                          x.accumulate_grad(MatrixX<S>::Constant(
                              x.rows(), x.cols(), out.grad()(0, 0)));
                        };
                      });
}

/// Elementwise sum of same-shape tensors.
template <typename S>
Tensor<S> add_n(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw UsageError("add_n: empty operand list");
  MatrixX<S> v = xs[0].value();
  bool track = xs[0].requires_grad();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].rows() != v.rows() || xs[i].cols() != v.cols()) {
      throw ShapeError("add_n: shape mismatch at operand " + std::to_string(i));
    }
    v += xs[i].value();
    track = track || xs[i].requires_grad();
  }
  return custom_op<S>(std::move(v), track, [&](const Tensor<S>& out) {
    return [xs, out] {
      if (!out.has_grad()) return;
      for (const auto& x : xs) {
        if (x.requires_grad()) x.accumulate_grad(out.grad());
      }
    };
  });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 1 || start + len > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " +
                     std::to_string(x.cols()) + " columns");
  }
  return custom_op<S>(x.value().middleCols(start, len), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out, start, len] {
                          if (!out.has_grad()) return;
                          MatrixX<S> g = MatrixX<S>::Zero(x.rows(), x.cols());
                          g.middleCols(start, len) = out.grad();
                          x.accumulate_grad(g);
                        };
                      });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: empty operand list");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
    track = track || p.requires_grad();
  }
  MatrixX<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return custom_op<S>(std::move(v), track, [&](const Tensor<S>& out) {
    return [parts, out] {
      if (!out.has_grad()) return;
      Eigen::Index at = 0;
      for (const auto& p : parts) {
        if (p.requires_grad())
          p.accumulate_grad(out.grad().middleCols(at, p.cols()));
        at += p.cols();
      }
    };
  });
}

/// Zeroes the rows whose mask entry is 0; gradient is blocked the same way.
template <typename S>
Tensor<S> zero_masked_rows(const Tensor<S>& x, const PadMask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != x.rows()) {
    throw ShapeError("zero_masked_rows: mask length " +
                     std::to_string(mask.size()) + " vs " +
                     std::to_string(x.rows()) + " rows");
  }
  MatrixX<S> v = x.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) v.row(i).setZero();
  }
  return custom_op<S>(std::move(v), x.requires_grad(),
                      [&](const Tensor<S>& out) {
                        return [x, out, mask] {
                          if (!out.has_grad()) return;
                          MatrixX<S> g = out.grad();
                          for (Eigen::Index i = 0; i < g.rows(); ++i) {
                            if (!mask[static_cast<std::size_t>(i)])
                              g.row(i).setZero();
                          }
                          x.accumulate_grad(g);
                        };
                      });
}

/// y = x * W + broadcast bias; the workhorse projection.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowwise(matmul(x, w), b);
}

}  // namespace xaln
