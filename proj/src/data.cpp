// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#include "xaln/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "xaln/binio.hpp"
#include "xaln/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xaln {

namespace {
constexpr char kFeatureMagic[4] = {'X', 'A', 'L', 'N'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void save_region_features(const std::string& path, const RegionSet<float>& r) {
  r.validate();
  BinWriter w(path);
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(r.features.rows()));
  w.u32(static_cast<std::uint32_t>(r.features.cols()));
  for (Eigen::Index i = 0; i < r.features.rows(); ++i)
    for (Eigen::Index j = 0; j < r.features.cols(); ++j)
      w.f32(r.features(i, j));
  for (Eigen::Index i = 0; i < r.boxes.rows(); ++i)
    for (int j = 0; j < 4; ++j) w.f32(r.boxes(i, j));
  w.close();
}

RegionSet<float> load_region_features(const std::string& path) {
  BinReader rd(path);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kFeatureMagic, 4)) {
    throw FormatError(path + ": bad magic", 0);
  }
  const std::uint32_t version = rd.u32();
  if (version != kFeatureVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version),
                      4);
  }
  const std::size_t n_at = rd.offset();
  const std::uint32_t n = rd.u32();
  const std::uint32_t d_v = rd.u32();
  if (n == 0 || d_v == 0) {
    throw FormatError(path + ": empty region set (n=" + std::to_string(n) +
                          ", d_v=" + std::to_string(d_v) + ")",
                      n_at);
  }
  RegionSet<float> r;
  r.features.resize(n, d_v);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d_v; ++j) r.features(i, j) = rd.f32();
  r.boxes.resize(n, 4);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) {
      const std::size_t at = rd.offset();
      const float v = rd.f32();
      if (v < 0.0f || v > 1.0f) {
        throw FormatError(path + ": box coordinate " + std::to_string(v) +
                              " outside [0,1]",
                          at);
      }
      r.boxes(i, j) = v;
    }
    if (r.boxes(i, 2) < r.boxes(i, 0) || r.boxes(i, 3) < r.boxes(i, 1)) {
      throw FormatError(path + ": degenerate box in region " +
                            std::to_string(i),
                        rd.offset() - 16);
    }
  }
  if (!rd.at_eof()) {
    throw FormatError(path + ": trailing bytes after region data", rd.offset());
  }
  r.mask = full_mask(n);
  return r;
}

// --- manifests -----------------------------------------------------------------

void save_manifest(const std::string& path, const CorpusManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path);
  json header;
  header["vocab"] = m.vocab_file;
  header["stopwords"] = m.stopword_file;
  out << header.dump() << '\n';
  for (const auto& item : m.items) {
    json j;
    j["image_id"] = item.image_id;
    j["features"] = item.feature_file;
    j["n"] = item.region_count;
    json caps = json::array();
    for (const auto& c : item.captions) {
      caps.push_back({{"tokens", c.token_ids}, {"text", c.text}});
    }
    j["captions"] = caps;
    out << j.dump() << '\n';
  }
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);
  CorpusManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                            ": invalid manifest line: " + e.what(),
                        line_no);
    }
    if (line_no == 1) {
      if (!j.contains("vocab") || !j.contains("stopwords")) {
        throw FormatError(path + ": manifest header must name vocab and "
                          "stopwords files",
                          1);
      }
      m.vocab_file = j.at("vocab").get<std::string>();
      m.stopword_file = j.at("stopwords").get<std::string>();
      continue;
    }
    ManifestItem item;
    try {
      item.image_id = j.at("image_id").get<std::string>();
      item.feature_file = j.at("features").get<std::string>();
      item.region_count = j.at("n").get<int>();
      for (const auto& c : j.at("captions")) {
        CaptionRecord rec;
        rec.token_ids = c.at("tokens").get<std::vector<int>>();
        rec.text = c.at("text").get<std::string>();
        item.captions.push_back(std::move(rec));
      }
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                            ": bad manifest item: " + e.what(),
                        line_no);
    }
    if (item.captions.empty()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": image " +
                            item.image_id + " has no captions",
                        line_no);
    }
    m.items.push_back(std::move(item));
  }
  if (m.vocab_file.empty()) {
    throw FormatError(path + ": missing manifest header", 0);
  }
  return m;
}

Corpus load_corpus(const std::string& manifest_path) {
  const CorpusManifest manifest = load_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  Corpus corpus;
  corpus.vocab = Vocabulary::load((dir / manifest.vocab_file).string());
  corpus.stopwords = load_stopwords((dir / manifest.stopword_file).string());
  for (const auto& item : manifest.items) {
    RegionSet<float> regions =
        load_region_features((dir / item.feature_file).string());
    if (regions.count() != item.region_count) {
      throw FormatError(item.feature_file + ": manifest promises " +
                            std::to_string(item.region_count) +
                            " regions, file holds " +
                            std::to_string(regions.count()),
                        8);
    }
    std::vector<TokenSeq> seqs;
    std::vector<std::vector<std::string>> token_lists;
    for (const auto& cap : item.captions) {
      TokenSeq seq;
      seq.token_ids = cap.token_ids;
      seq.mask = full_mask(cap.token_ids.size());
      seq.stop_flags.resize(cap.token_ids.size());
      for (std::size_t i = 0; i < cap.token_ids.size(); ++i) {
        seq.stop_flags[i] =
            corpus.stopwords.count(corpus.vocab.token(cap.token_ids[i])) ? 1
                                                                         : 0;
      }
      seq.validate(corpus.vocab.size());
      seqs.push_back(std::move(seq));
      token_lists.push_back(tokenize(cap.text));
    }
    corpus.image_ids.push_back(item.image_id);
    corpus.regions.push_back(std::move(regions));
    corpus.captions.push_back(std::move(seqs));
    corpus.caption_tokens.push_back(std::move(token_lists));
  }
  if (corpus.regions.empty()) throw UsageError("corpus: no images");
  return corpus;
}

// --- synthetic corpora -----------------------------------------------------------

namespace {

const std::vector<std::string> kStopWords = {"the", "a",  "an",  "of",
                                             "on",  "in", "and", "with"};

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

std::string generate_synthetic(const SyntheticSpec& spec,
                               const std::string& out_dir) {
  if (spec.concept_count < 1 || spec.images < 1 ||
      spec.captions_per_image < 1 || spec.regions_per_image < 1 ||
      spec.words_per_caption < 1 || spec.feature_dim < 1 ||
      spec.noise_std < 0.0) {
    throw ValueError("synthetic spec: all counts must be positive");
  }
  const int stop_count = std::min(2, spec.words_per_caption / 3);
  const int concepts_per_image = spec.words_per_caption - stop_count;
  if (concepts_per_image < 1) {
    throw ValueError("synthetic spec: captions too short to name a concept");
  }
  if (concepts_per_image > spec.regions_per_image) {
    throw ValueError("synthetic spec: " + std::to_string(concepts_per_image) +
                     " concepts per image exceed " +
                     std::to_string(spec.regions_per_image) + " regions");
  }
  if (concepts_per_image > spec.concept_count) {
    throw ValueError("synthetic spec: concepts per image exceed concept count");
  }
  // Distinct concept subsets make images separable; demand enough of them.
  if (log_binomial(spec.concept_count, concepts_per_image) <
      std::log(static_cast<double>(spec.images))) {
    throw ValueError("synthetic spec: fewer distinct concept subsets than images");
  }

  fs::create_directories(fs::path(out_dir) / "features");
  CounterRng rng(spec.seed);

  // Vocabulary: pad token, stop-words, then one token per concept.
  std::vector<std::string> vocab_tokens{"<pad>"};
  for (const auto& s : kStopWords) vocab_tokens.push_back(s);
  for (int c = 0; c < spec.concept_count; ++c) {
    vocab_tokens.push_back("c" + std::to_string(c));
  }
  Vocabulary vocab = Vocabulary::from_tokens(vocab_tokens);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  {
    std::ofstream stops((fs::path(out_dir) / "stopwords.txt").string(),
                        std::ios::trunc);
    for (const auto& s : kStopWords) stops << s << '\n';
  }
  const int concept_id_base = 1 + static_cast<int>(kStopWords.size());

  // Unit-norm concept prototypes.
  MatrixX<float> prototypes(spec.concept_count, spec.feature_dim);
  for (int c = 0; c < spec.concept_count; ++c) {
    for (int j = 0; j < spec.feature_dim; ++j) {
      prototypes(c, j) = static_cast<float>(rng.next_gaussian());
    }
    prototypes.row(c) /= std::max(prototypes.row(c).norm(), 1e-8f);
  }

  auto sample_subset = [&](std::set<std::vector<int>>& seen) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      std::vector<int> pool(spec.concept_count);
      for (int i = 0; i < spec.concept_count; ++i) pool[i] = i;
      for (int i = 0; i < concepts_per_image; ++i) {
        const int j = i + static_cast<int>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      std::vector<int> subset(pool.begin(), pool.begin() + concepts_per_image);
      std::vector<int> key = subset;
      std::sort(key.begin(), key.end());
      if (seen.insert(key).second) return subset;
    }
    throw ValueError("synthetic spec: could not sample distinct concept subsets");
  };

  auto random_box = [&](MatrixX<float>& boxes, int row) {
    const float x1 = static_cast<float>(rng.next_uniform(0.0, 0.5));
    const float y1 = static_cast<float>(rng.next_uniform(0.0, 0.5));
    boxes(row, 0) = x1;
    boxes(row, 1) = y1;
    boxes(row, 2) = x1 + static_cast<float>(rng.next_uniform(0.05, 0.5));
    boxes(row, 3) = y1 + static_cast<float>(rng.next_uniform(0.05, 0.5));
  };

  CorpusManifest manifest;
  manifest.vocab_file = "vocab.txt";
  manifest.stopword_file = "stopwords.txt";
  std::vector<PlantedPair> planted;
  std::set<std::vector<int>> seen_subsets;

  for (int img = 0; img < spec.images; ++img) {
    const std::vector<int> concepts = sample_subset(seen_subsets);

    // Assign each concept a random region slot; remaining slots hold
    // unrelated distractor vectors so words have exactly one matching region.
    std::vector<int> slots(spec.regions_per_image);
    for (int i = 0; i < spec.regions_per_image; ++i) slots[i] = i;
    for (int i = spec.regions_per_image - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_below(i + 1));
      std::swap(slots[i], slots[j]);
    }

    RegionSet<float> regions;
    regions.features =
        MatrixX<float>::Zero(spec.regions_per_image, spec.feature_dim);
    regions.boxes = MatrixX<float>(spec.regions_per_image, 4);
    regions.mask = full_mask(spec.regions_per_image);
    std::vector<int> concept_slot(spec.concept_count, -1);
    for (int k = 0; k < spec.regions_per_image; ++k) {
      const int slot = slots[k];
      if (k < concepts_per_image) {
        regions.features.row(slot) = prototypes.row(concepts[k]);
        concept_slot[concepts[k]] = slot;
      } else {
        for (int j = 0; j < spec.feature_dim; ++j) {
          regions.features(slot, j) = static_cast<float>(rng.next_gaussian());
        }
        regions.features.row(slot) /=
            std::max(regions.features.row(slot).norm(), 1e-8f);
      }
      for (int j = 0; j < spec.feature_dim; ++j) {
        regions.features(slot, j) +=
            static_cast<float>(rng.next_gaussian() * spec.noise_std);
      }
      random_box(regions.boxes, slot);
    }

    char file_id[32];
    std::snprintf(file_id, sizeof(file_id), "img%05d", img);
    const std::string feature_file =
        "features/" + std::string(file_id) + ".xaln";
    save_region_features((fs::path(out_dir) / feature_file).string(), regions);

    ManifestItem item;
    item.image_id = file_id;
    item.feature_file = feature_file;
    item.region_count = spec.regions_per_image;

    for (int cap = 0; cap < spec.captions_per_image; ++cap) {
      // Concept tokens in random order, then stop-words spliced in.
      std::vector<int> order(concepts.begin(), concepts.end());
      for (int i = concepts_per_image - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(i + 1));
        std::swap(order[i], order[j]);
      }
      std::vector<int> word_concepts(order.begin(), order.end());
      std::vector<int> ids;
      std::vector<int> concept_positions;
      for (int c : word_concepts) ids.push_back(concept_id_base + c);
      for (int s = 0; s < stop_count; ++s) {
        const int pos = static_cast<int>(rng.next_below(ids.size() + 1));
        const int stop_id =
            1 + static_cast<int>(rng.next_below(kStopWords.size()));
        ids.insert(ids.begin() + pos, stop_id);
        word_concepts.insert(word_concepts.begin() + pos, -1);
      }
      std::string text;
      for (std::size_t w = 0; w < ids.size(); ++w) {
        if (w) text += ' ';
        text += vocab.token(ids[w]);
      }
      for (std::size_t w = 0; w < ids.size(); ++w) {
        if (word_concepts[w] < 0) continue;
        PlantedPair p;
        p.image = img;
        p.caption = cap;
        p.word = static_cast<int>(w);
        p.region = concept_slot[word_concepts[w]];
        planted.push_back(p);
      }
      item.captions.push_back(CaptionRecord{std::move(ids), std::move(text)});
    }
    manifest.items.push_back(std::move(item));
  }

  // Generator self-check: every non-stop word got exactly one region.
  const std::size_t expected_pairs =
      static_cast<std::size_t>(spec.images) * spec.captions_per_image *
      concepts_per_image;
  if (planted.size() != expected_pairs) {
    throw Error("synthetic generator: planted pair bookkeeping mismatch");
  }

  {
    std::ofstream out((fs::path(out_dir) / "planted.jsonl").string(),
                      std::ios::trunc);
    for (const auto& p : planted) {
      json j{{"image", p.image},
             {"caption", p.caption},
             {"word", p.word},
             {"region", p.region}};
      out << j.dump() << '\n';
    }
  }

  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.jsonl").string();
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

std::vector<PlantedPair> load_planted_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open planted truth: " + path);
  std::vector<PlantedPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    PlantedPair p;
    p.image = j.at("image").get<int>();
    p.caption = j.at("caption").get<int>();
    p.word = j.at("word").get<int>();
    p.region = j.at("region").get<int>();
    out.push_back(p);
  }
  return out;
}

// --- batching --------------------------------------------------------------------

std::vector<Batch> epoch_batches(const Corpus& corpus, int batch_size,
                                 std::uint64_t seed, int epoch) {
  if (batch_size < 2) {
    throw ValueError("batcher: batch_size must be at least 2 (the loss needs "
                     "in-batch negatives)");
  }
  const int n = static_cast<int>(corpus.image_count());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(seed + 0x9e3779b97f4a7c15ULL *
                            static_cast<std::uint64_t>(epoch + 1));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(i + 1));
    std::swap(order[i], order[j]);
  }

  std::vector<Batch> batches;
  for (int at = 0; at < n; at += batch_size) {
    const int count = std::min(batch_size, n - at);
    if (count < 2) break;  // a lone item has no in-batch negative
    Batch b;
    Eigen::Index max_regions = 0, max_tokens = 0;
    for (int i = 0; i < count; ++i) {
      const int img = order[at + i];
      const int cap =
          epoch % static_cast<int>(corpus.captions[img].size());
      b.image_indices.push_back(img);
      b.caption_indices.push_back(cap);
      max_regions = std::max(max_regions, corpus.regions[img].count());
      max_tokens = std::max(
          max_tokens,
          static_cast<Eigen::Index>(corpus.captions[img][cap].length()));
    }
    for (int i = 0; i < count; ++i) {
      const int img = b.image_indices[i];
      const int cap = b.caption_indices[i];
      const RegionSet<float>& src = corpus.regions[img];
      RegionSet<float> padded;
      padded.features = MatrixX<float>::Zero(max_regions, src.feature_dim());
      padded.features.topRows(src.count()) = src.features;
      padded.boxes = MatrixX<float>::Zero(max_regions, 4);
      padded.boxes.topRows(src.count()) = src.boxes;
      padded.mask.assign(max_regions, 0);
      for (Eigen::Index r = 0; r < src.count(); ++r) padded.mask[r] = 1;
      b.images.push_back(std::move(padded));

      const TokenSeq& seq = corpus.captions[img][cap];
      TokenSeq padded_seq;
      padded_seq.token_ids.assign(max_tokens, 0);
      padded_seq.mask.assign(max_tokens, 0);
      padded_seq.stop_flags.assign(max_tokens, 0);
      for (std::size_t t = 0; t < seq.length(); ++t) {
        padded_seq.token_ids[t] = seq.token_ids[t];
        padded_seq.mask[t] = seq.mask[t];
        padded_seq.stop_flags[t] = seq.stop_flags[t];
      }
      b.captions.push_back(std::move(padded_seq));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace xaln
