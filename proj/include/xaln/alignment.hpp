// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Region-word alignment: pairwise cosine matrix between the two
// contextualized sets, pooled into a single image-sentence similarity.
// The max in every pooling variant routes its gradient to the argmax entry,
// lowest index on ties.

#pragma once

#include <array>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "xaln/tensor.hpp"
#include "xaln/types.hpp"

namespace xaln {

template <typename S>
struct AlignmentMatrix {
  Tensor<S> values;  // n regions x m words, cosine similarities
  PadMask region_mask;
  PadMask word_mask;
};

enum class PoolingKind { kMrSw, kMwSr, kSymm, kMrAvgW };

inline std::string to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::kMrSw: return "mrsw";
    case PoolingKind::kMwSr: return "mwsr";
    case PoolingKind::kSymm: return "symm";
    case PoolingKind::kMrAvgW: return "mravgw";
  }
  return "?";
}

inline PoolingKind pooling_from_string(const std::string& s) {
  if (s == "mrsw") return PoolingKind::kMrSw;
  if (s == "mwsr") return PoolingKind::kMwSr;
  if (s == "symm") return PoolingKind::kSymm;
  if (s == "mravgw") return PoolingKind::kMrAvgW;
  throw ValueError("unknown pooling kind: " + s);
}

/// All-pairs cosine between rows of v [n x d] and rows of s [m x d], as one
/// differentiable op: A = normalize_rows(v) * normalize_rows(s)^T with
/// eps-clamped norms.
template <typename S>
Tensor<S> cosine_rows(const Tensor<S>& v, const Tensor<S>& s,
                      S eps = S(1e-8)) {
  if (v.cols() != s.cols()) {
    throw ShapeError("cosine_rows: feature dims disagree: " +
                     detail::shape_str(v.rows(), v.cols()) + " vs " +
                     detail::shape_str(s.rows(), s.cols()));
  }
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  auto vn = std::make_shared<Vec>(v.rows());
  auto sn = std::make_shared<Vec>(s.rows());
  auto vhat = std::make_shared<MatrixX<S>>(v.rows(), v.cols());
  auto shat = std::make_shared<MatrixX<S>>(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    (*vn)(i) = std::max(v.value().row(i).norm(), eps);
    vhat->row(i) = v.value().row(i) / (*vn)(i);
  }
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    (*sn)(j) = std::max(s.value().row(j).norm(), eps);
    shat->row(j) = s.value().row(j) / (*sn)(j);
  }
  MatrixX<S> a = (*vhat) * shat->transpose();
  return custom_op<S>(
      std::move(a), v.requires_grad() || s.requires_grad(),
      [&](const Tensor<S>& out) {
        return [v, s, out, vn, sn, vhat, shat, eps] {
          if (!out.has_grad()) return;
          const MatrixX<S>& g = out.grad();
          if (v.requires_grad()) {
            MatrixX<S> p = g * (*shat);  // n x d
            MatrixX<S> dv(v.rows(), v.cols());
            for (Eigen::Index i = 0; i < v.rows(); ++i) {
              dv.row(i) = p.row(i) / (*vn)(i);
              if (v.value().row(i).norm() > eps) {
                dv.row(i) -= vhat->row(i) *
                             (vhat->row(i).dot(p.row(i)) / (*vn)(i));
              }
            }
            v.accumulate_grad(dv);
          }
          if (s.requires_grad()) {
            MatrixX<S> q = g.transpose() * (*vhat);  // m x d
            MatrixX<S> ds(s.rows(), s.cols());
            for (Eigen::Index j = 0; j < s.rows(); ++j) {
              ds.row(j) = q.row(j) / (*sn)(j);
              if (s.value().row(j).norm() > eps) {
                ds.row(j) -= shat->row(j) *
                             (shat->row(j).dot(q.row(j)) / (*sn)(j));
              }
            }
            s.accumulate_grad(ds);
          }
        };
      });
}

/// A_ij = cosine(v_i, s_j) with both masks carried through.
template <typename S>
AlignmentMatrix<S> alignment_matrix(const ContextualizedSet<S>& regions,
                                    const ContextualizedSet<S>& words) {
  return AlignmentMatrix<S>{cosine_rows(regions.features, words.features),
                            regions.mask, words.mask};
}

namespace detail {

/// Index of the max over unmasked rows of column j; lowest index wins ties.
template <typename S>
Eigen::Index argmax_col(const MatrixX<S>& a, Eigen::Index j,
                        const PadMask& rows) {
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!rows[static_cast<std::size_t>(i)]) continue;
    if (best < 0 || a(i, j) > a(best, j)) best = i;
  }
  return best;
}

template <typename S>
Eigen::Index argmax_row(const MatrixX<S>& a, Eigen::Index i,
                        const PadMask& cols) {
  Eigen::Index best = -1;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (!cols[static_cast<std::size_t>(j)]) continue;
    if (best < 0 || a(i, j) > a(i, best)) best = j;
  }
  return best;
}

}  // namespace detail

/// Pools the alignment matrix into one scalar similarity.
///   MrSw:  sum over unmasked words of the max over unmasked regions
///   MwSr:  sum over unmasked regions of the max over unmasked words
///   Symm:  MrSw + MwSr
///   MrAvgW: MrSw / number of unmasked words
template <typename S>
Tensor<S> pool(const AlignmentMatrix<S>& a, PoolingKind kind) {
  const MatrixX<S>& m = a.values.value();
  if (static_cast<Eigen::Index>(a.region_mask.size()) != m.rows() ||
      static_cast<Eigen::Index>(a.word_mask.size()) != m.cols()) {
    throw ShapeError("pool: mask lengths do not match matrix shape");
  }
  const std::size_t n_regions = mask_count(a.region_mask);
  const std::size_t n_words = mask_count(a.word_mask);
  if (n_regions == 0 || n_words == 0) {
    throw UsageError("pool: fully masked axis (regions=" +
                     std::to_string(n_regions) + ", words=" +
                     std::to_string(n_words) + ")");
  }

  // (row, col) of every max cell receiving gradient, with its weight.
  auto routes =
      std::make_shared<std::vector<std::tuple<Eigen::Index, Eigen::Index, S>>>();
  S value = S(0);

  const bool over_words = kind == PoolingKind::kMrSw ||
                          kind == PoolingKind::kSymm ||
                          kind == PoolingKind::kMrAvgW;
  const bool over_regions =
      kind == PoolingKind::kMwSr || kind == PoolingKind::kSymm;
  const S word_weight =
      kind == PoolingKind::kMrAvgW ? S(1) / static_cast<S>(n_words) : S(1);

  if (over_words) {
    S acc = S(0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!a.word_mask[static_cast<std::size_t>(j)]) continue;
      Eigen::Index i = detail::argmax_col(m, j, a.region_mask);
      acc += m(i, j);
      routes->emplace_back(i, j, word_weight);
    }
    value += acc * word_weight;
  }
  if (over_regions) {
    S acc = S(0);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!a.region_mask[static_cast<std::size_t>(i)]) continue;
      Eigen::Index j = detail::argmax_row(m, i, a.word_mask);
      acc += m(i, j);
      routes->emplace_back(i, j, S(1));
    }
    value += acc;
  }

  MatrixX<S> out(1, 1);
  out(0, 0) = value;
  Tensor<S> av = a.values;
  return custom_op<S>(std::move(out), av.requires_grad(),
                      [&](const Tensor<S>& res) {
                        return [av, res, routes] {
                          if (!res.has_grad()) return;
                          const S g = res.grad()(0, 0);
                          MatrixX<S> ga =
                              MatrixX<S>::Zero(av.rows(), av.cols());
                          for (const auto& [i, j, w] : *routes) {
                            ga(i, j) += g * w;
                          }
                          av.accumulate_grad(ga);
                        };
                      });
}

/// Batch or corpus similarity scores with live gradient handles on every
/// cell; entry (k, l) pools the alignment of image k with caption l. There
/// is no cross-pair state.
template <typename S>
struct SimilarityCells {
  Eigen::Index n_images = 0;
  Eigen::Index n_captions = 0;
  std::vector<Tensor<S>> cells;  // row-major

  const Tensor<S>& at(Eigen::Index k, Eigen::Index l) const {
    return cells[static_cast<std::size_t>(k * n_captions + l)];
  }

  MatrixX<S> values() const {
    MatrixX<S> v(n_images, n_captions);
    for (Eigen::Index k = 0; k < n_images; ++k)
      for (Eigen::Index l = 0; l < n_captions; ++l) v(k, l) = at(k, l).item();
    return v;
  }
};

template <typename S>
SimilarityCells<S> similarity_cells(
    const std::vector<ContextualizedSet<S>>& images,
    const std::vector<ContextualizedSet<S>>& captions, PoolingKind kind) {
  if (images.empty() || captions.empty()) {
    throw UsageError("similarity_matrix: empty input list");
  }
  SimilarityCells<S> out;
  out.n_images = static_cast<Eigen::Index>(images.size());
  out.n_captions = static_cast<Eigen::Index>(captions.size());
  out.cells.reserve(images.size() * captions.size());
  for (const auto& img : images) {
    for (const auto& cap : captions) {
      out.cells.push_back(pool(alignment_matrix(img, cap), kind));
    }
  }
  return out;
}

/// Plain score matrix S[k][l]; identical math without gradient bookkeeping
/// when no tape is active.
template <typename S>
MatrixX<S> similarity_matrix(const std::vector<ContextualizedSet<S>>& images,
                             const std::vector<ContextualizedSet<S>>& captions,
                             PoolingKind kind) {
  return similarity_cells(images, captions, kind).values();
}

/// Clears the pooling mask on stop-flagged tokens. The encoder still sees
/// the full sequence; only pooling ignores the stop-words.
inline TokenSeq apply_stopword_mask(const TokenSeq& seq) {
  if (seq.stop_flags.size() != seq.token_ids.size()) {
    throw ShapeError("apply_stopword_mask: missing stop flags");
  }
  TokenSeq out = seq;
  for (std::size_t i = 0; i < out.mask.size(); ++i) {
    if (out.mask[i] && out.stop_flags[i]) out.mask[i] = 0;
  }
  if (!mask_any(out.mask)) {
    throw UsageError("apply_stopword_mask: caption is entirely stop-words");
  }
  return out;
}

// --- grounding export --------------------------------------------------------

/// One word grounded onto its top-scoring region.
struct GroundingRecord {
  std::string token;
  int word_index = 0;
  int region_index = 0;
  std::array<double, 4> box{};
  double score = 0.0;
};

/// For every unmasked word: the argmax region, its box and the cosine value.
template <typename S>
std::vector<GroundingRecord> export_groundings(
    const AlignmentMatrix<S>& a, const std::vector<std::string>& tokens,
    const MatrixX<S>& boxes) {
  const MatrixX<S>& m = a.values.value();
  if (static_cast<Eigen::Index>(tokens.size()) != m.cols()) {
    throw ShapeError("export_groundings: token count mismatch");
  }
  if (boxes.rows() != m.rows() || boxes.cols() != 4) {
    throw ShapeError("export_groundings: box table mismatch");
  }
  std::vector<GroundingRecord> records;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!a.word_mask[static_cast<std::size_t>(j)]) continue;
    Eigen::Index i = detail::argmax_col(m, j, a.region_mask);
    GroundingRecord rec;
    rec.token = tokens[static_cast<std::size_t>(j)];
    rec.word_index = static_cast<int>(j);
    rec.region_index = static_cast<int>(i);
    for (int b = 0; b < 4; ++b) rec.box[b] = static_cast<double>(boxes(i, b));
    rec.score = static_cast<double>(m(i, j));
    records.push_back(std::move(rec));
  }
  return records;
}

/// Line-delimited record: fixed field order, six decimals on box and score.
inline std::string format_grounding_line(const GroundingRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"token\":\"%s\",\"word_index\":%d,\"region_index\":%d,"
                "\"box\":[%.6f,%.6f,%.6f,%.6f],\"score\":%.6f}",
                r.token.c_str(), r.word_index, r.region_index, r.box[0],
                r.box[1], r.box[2], r.box[3], r.score);
  return std::string(buf);
}

}  // namespace xaln
