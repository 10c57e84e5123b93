// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#include "xaln/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaln/binio.hpp"

namespace xaln {

namespace {

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) {
    throw UsageError("rouge_l: empty token sequence");
  }
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double caption_set_relevance(
    const std::vector<std::vector<std::string>>& caption_set,
    const std::vector<std::string>& query, RelevanceAgg agg) {
  if (caption_set.empty()) {
    throw UsageError("caption_set_relevance: empty caption set");
  }
  double best = 0.0, total = 0.0;
  for (const auto& cap : caption_set) {
    const double s = rouge_l(query, cap);
    best = std::max(best, s);
    total += s;
  }
  return agg == RelevanceAgg::kMax
             ? best
             : total / static_cast<double>(caption_set.size());
}

namespace {

template <typename Get>
std::vector<int> rank_by(std::size_t n, Get&& score) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return score(a) > score(b);
  });
  return idx;
}

}  // namespace

std::vector<int> rank_descending(
    const Eigen::Ref<const Eigen::VectorXf>& scores) {
  return rank_by(static_cast<std::size_t>(scores.size()),
                 [&](int i) { return scores(i); });
}

std::vector<int> rank_descending(const std::vector<double>& scores) {
  return rank_by(scores.size(), [&](int i) { return scores[i]; });
}

double ndcg(const std::vector<int>& ranked, const std::vector<double>& rels,
            int p) {
  if (p < 1) throw ValueError("ndcg: p must be >= 1");
  if (ranked.size() != rels.size()) {
    throw UsageError("ndcg: ranked list has " + std::to_string(ranked.size()) +
                     " entries, relevance has " + std::to_string(rels.size()));
  }
  const std::size_t cut = std::min<std::size_t>(ranked.size(),
                                                static_cast<std::size_t>(p));
  double dcg = 0.0;
  for (std::size_t i = 0; i < cut; ++i) {
    dcg += rels[static_cast<std::size_t>(ranked[i])] /
           std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<double> ideal = rels;
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < cut; ++i) {
    idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  if (idcg == 0.0) return 1.0;
  return dcg / idcg;
}

double recall_at_k(const std::vector<std::vector<int>>& ranked_lists,
                   const std::vector<std::vector<int>>& ground_truth,
                   int k) {
  if (k < 1) throw ValueError("recall_at_k: k must be >= 1");
  if (ranked_lists.size() != ground_truth.size()) {
    throw UsageError("recall_at_k: query count mismatch");
  }
  if (ranked_lists.empty()) throw UsageError("recall_at_k: no queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranked_lists.size(); ++q) {
    if (ground_truth[q].empty()) {
      throw UsageError("recall_at_k: query " + std::to_string(q) +
                       " has no ground-truth documents");
    }
    const auto& ranked = ranked_lists[q];
    const std::size_t cut =
        std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    bool hit = false;
    for (std::size_t i = 0; i < cut && !hit; ++i) {
      for (int g : ground_truth[q]) {
        if (ranked[i] == g) {
          hit = true;
          break;
        }
      }
    }
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked_lists.size());
}

RelevanceTable build_relevance_table(
    const std::vector<std::vector<std::vector<std::string>>>& captions_per_image,
    QueryKind kind, RelevanceAgg agg) {
  const int n_images = static_cast<int>(captions_per_image.size());
  if (n_images == 0) {
    throw UsageError("build_relevance_table: empty corpus");
  }
  std::vector<const std::vector<std::string>*> captions;
  std::vector<int> owner;
  for (int i = 0; i < n_images; ++i) {
    if (captions_per_image[i].empty()) {
      throw UsageError("build_relevance_table: image " + std::to_string(i) +
                       " has no captions");
    }
    for (const auto& c : captions_per_image[i]) {
      captions.push_back(&c);
      owner.push_back(i);
    }
  }
  const int n_captions = static_cast<int>(captions.size());

  // rel(caption q, image i) = agg over the image's caption set of
  // rouge_l(q, caption). Both table kinds read from this one matrix.
  Eigen::MatrixXf cap_to_img(n_captions, n_images);
  for (int q = 0; q < n_captions; ++q) {
    int at = 0;
    for (int i = 0; i < n_images; ++i) {
      double best = 0.0, total = 0.0;
      const auto count = captions_per_image[i].size();
      for (std::size_t c = 0; c < count; ++c, ++at) {
        const double s = rouge_l(*captions[q], *captions[at]);
        best = std::max(best, s);
        total += s;
      }
      cap_to_img(q, i) = static_cast<float>(
          agg == RelevanceAgg::kMax ? best
                                    : total / static_cast<double>(count));
    }
  }

  RelevanceTable t;
  t.kind = kind;
  t.tau_name = "rouge_l";
  t.tokenizer_version = 0;  // caller stamps it when tokens came from text
  if (kind == QueryKind::kImageRetrieval) {
    t.values = cap_to_img;  // queries: captions, documents: images
  } else {
    t.values = cap_to_img.transpose();  // queries: images, documents: captions
  }
  return t;
}

namespace {
constexpr char kRelevanceMagic[4] = {'X', 'R', 'E', 'L'};
constexpr std::uint32_t kRelevanceVersion = 1;
}  // namespace

void save_relevance_table(const std::string& path, const RelevanceTable& t) {
  BinWriter w(path);
  w.bytes(kRelevanceMagic, 4);
  w.u32(kRelevanceVersion);
  w.u32(t.kind == QueryKind::kImageRetrieval ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(t.values.rows()));
  w.u32(static_cast<std::uint32_t>(t.values.cols()));
  w.str(t.tau_name);
  w.u32(t.tokenizer_version);
  for (Eigen::Index i = 0; i < t.values.rows(); ++i)
    for (Eigen::Index j = 0; j < t.values.cols(); ++j) w.f32(t.values(i, j));
  w.close();
}

RelevanceTable load_relevance_table(const std::string& path) {
  BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kRelevanceMagic, 4)) {
    throw FormatError(path + ": bad magic", 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kRelevanceVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version),
                      4);
  }
  RelevanceTable t;
  t.kind = r.u32() == 0 ? QueryKind::kImageRetrieval
                        : QueryKind::kCaptionRetrieval;
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  t.tau_name = r.str(256);
  t.tokenizer_version = r.u32();
  t.values.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) t.values(i, j) = r.f32();
  return t;
}

}  // namespace xaln
