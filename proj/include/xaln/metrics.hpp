// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Retrieval evaluation: Recall@K, NDCG with graded relevance, and the
// ROUGE-L caption similarity used as the relevance oracle.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "xaln/errors.hpp"

namespace xaln {

/// LCS-based F measure with balanced precision/recall:
///   P = lcs/|cand|, R = lcs/|ref|, F = 2PR/(P+R), 0 when the LCS is empty.
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference);

enum class RelevanceAgg { kMax, kMean };

inline std::string to_string(RelevanceAgg a) {
  return a == RelevanceAgg::kMax ? "max" : "mean";
}
inline RelevanceAgg relevance_agg_from_string(const std::string& s) {
  if (s == "max") return RelevanceAgg::kMax;
  if (s == "mean") return RelevanceAgg::kMean;
  throw ValueError("unknown relevance aggregation: " + s);
}

/// Relevance of a query sentence to a caption set: aggregated ROUGE-L over
/// the set (max by default, matching multi-reference convention).
double caption_set_relevance(
    const std::vector<std::vector<std::string>>& caption_set,
    const std::vector<std::string>& query,
    RelevanceAgg agg = RelevanceAgg::kMax);

/// Document indices sorted by descending score; ties break to the lower
/// index so rankings are deterministic.
std::vector<int> rank_descending(const Eigen::Ref<const Eigen::VectorXf>& scores);
std::vector<int> rank_descending(const std::vector<double>& scores);

/// NDCG at cut-off p with linear gain: DCG_p = sum_i rel_i / log2(i + 1)
/// over the first p ranked documents, normalized by the ideal ordering.
/// Returns 1.0 when the ideal DCG is zero (nothing to get wrong).
double ndcg(const std::vector<int>& ranked, const std::vector<double>& rels,
            int p);

/// Fraction of queries whose best-ranked ground-truth document sits within
/// the first k positions.
double recall_at_k(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<std::vector<int>>& ground_truth,
                   int k);

/// Elementwise mean of two score matrices from independently trained models.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
ensemble_scores(const Eigen::MatrixBase<Derived>& a,
                const Eigen::MatrixBase<Derived>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("ensemble_scores: shape mismatch: [" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     "] vs [" + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + "]");
  }
  return ((a + b) / typename Derived::Scalar(2)).eval();
}

// --- relevance tables --------------------------------------------------------

enum class QueryKind { kImageRetrieval, kCaptionRetrieval };

inline std::string to_string(QueryKind k) {
  return k == QueryKind::kImageRetrieval ? "image_retrieval"
                                         : "caption_retrieval";
}

/// Graded relevance of every document to every query, derived from caption
/// similarities. Exact-match pairs go through tau like any other pair.
struct RelevanceTable {
  QueryKind kind = QueryKind::kImageRetrieval;
  std::string tau_name = "rouge_l";
  std::uint32_t tokenizer_version = 0;
  Eigen::MatrixXf values;  // queries x documents

  std::vector<double> row(int q) const {
    std::vector<double> out(static_cast<std::size_t>(values.cols()));
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      out[static_cast<std::size_t>(j)] = values(q, j);
    return out;
  }
};

/// captions_per_image[i][c] is the token list of caption c of image i.
/// Image retrieval: queries are the flattened captions, documents are
/// images. Caption retrieval: queries are images, documents are captions.
RelevanceTable build_relevance_table(
    const std::vector<std::vector<std::vector<std::string>>>& captions_per_image,
    QueryKind kind, RelevanceAgg agg = RelevanceAgg::kMax);

/// Cache file: magic "XREL", version, row/col counts, tau name, tokenizer
/// version, then row-major 32-bit floats.
void save_relevance_table(const std::string& path, const RelevanceTable& t);
RelevanceTable load_relevance_table(const std::string& path);

}  // namespace xaln
