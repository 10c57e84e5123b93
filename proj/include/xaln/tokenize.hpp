// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace xaln {

/// Bump when tokenize() changes behavior; relevance caches record it.
inline constexpr std::uint32_t kTokenizerVersion = 1;

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(const std::string& text);

/// Token-per-line vocabulary with implicit line-number ids.
class Vocabulary {
 public:
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  /// Returns -1 for unknown tokens.
  int id_of(const std::string& token) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Token-per-line stop-word list.
std::unordered_set<std::string> load_stopwords(const std::string& path);

}  // namespace xaln
