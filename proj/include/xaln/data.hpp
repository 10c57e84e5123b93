// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion and generation. Region features live in one binary file
// per image (magic "XALN"); captions, vocabulary and stop-word references
// live in a line-delimited manifest. The synthetic generator plants known
// word-region correspondences so alignment quality can be scored exactly.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "xaln/tokenize.hpp"
#include "xaln/types.hpp"

namespace xaln {

// --- region feature files -----------------------------------------------------

/// Binary layout: magic "XALN", u32 version, u32 n, u32 d_v,
/// n x d_v row-major little-endian f32 features, then n x 4 f32 boxes.
void save_region_features(const std::string& path, const RegionSet<float>& r);
RegionSet<float> load_region_features(const std::string& path);

// --- manifests ------------------------------------------------------------------

struct CaptionRecord {
  std::vector<int> token_ids;
  std::string text;
};

struct ManifestItem {
  std::string image_id;
  std::string feature_file;  // relative to the manifest's directory
  int region_count = 0;
  std::vector<CaptionRecord> captions;
};

/// First manifest line references the vocabulary and stop-word files; every
/// following line is one image item.
struct CorpusManifest {
  std::string vocab_file;
  std::string stopword_file;
  std::vector<ManifestItem> items;
};

void save_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest load_manifest(const std::string& path);

/// Fully loaded corpus: features, token sequences with stop flags, and the
/// tokenized raw captions used by the relevance oracle.
struct Corpus {
  Vocabulary vocab;
  std::unordered_set<std::string> stopwords;
  std::vector<std::string> image_ids;
  std::vector<RegionSet<float>> regions;
  std::vector<std::vector<TokenSeq>> captions;  // [image][caption]
  std::vector<std::vector<std::vector<std::string>>> caption_tokens;

  std::size_t image_count() const { return regions.size(); }
  std::size_t caption_count() const {
    std::size_t n = 0;
    for (const auto& c : captions) n += c.size();
    return n;
  }
};

Corpus load_corpus(const std::string& manifest_path);

// --- synthetic corpora ----------------------------------------------------------

/// Latent-concept corpus: every concept has a prototype region vector and a
/// vocabulary token. Each image shows a distinct subset of concepts (plus
/// unrelated distractor regions); each of its captions names those concepts
/// in random order with stop-word filler.
struct SyntheticSpec {
  int concept_count = 8;
  int images = 64;
  int captions_per_image = 1;
  int regions_per_image = 8;
  int words_per_caption = 6;
  double noise_std = 0.05;
  int feature_dim = 32;
  std::uint64_t seed = 1;
};

struct PlantedPair {
  int image = 0;
  int caption = 0;
  int word = 0;    // position in the caption
  int region = 0;  // region slot holding that concept's prototype
};

/// Writes vocab.txt, stopwords.txt, features/*.xaln, manifest.jsonl and
/// planted.jsonl under out_dir; returns the manifest path.
std::string generate_synthetic(const SyntheticSpec& spec,
                               const std::string& out_dir);

std::vector<PlantedPair> load_planted_truth(const std::string& path);

// --- batching -------------------------------------------------------------------

/// One training batch: image k is the positive pair of caption k. Regions
/// and tokens are padded to the batch maximum with masks.
struct Batch {
  std::vector<RegionSet<float>> images;
  std::vector<TokenSeq> captions;
  std::vector<int> image_indices;    // into the corpus
  std::vector<int> caption_indices;  // caption slot within the image

  std::size_t size() const { return images.size(); }
};

/// Deterministic epoch batching: shuffle order is a pure function of
/// (seed, epoch); image k pairs with caption (epoch mod captions_per_image);
/// a final partial batch is dropped when it has fewer than two items.
std::vector<Batch> epoch_batches(const Corpus& corpus, int batch_size,
                                 std::uint64_t seed, int epoch);

}  // namespace xaln
