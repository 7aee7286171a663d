// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qac/model.hpp"

namespace qac {

/// Lowercased word-level pieces: runs of letters/digits (bytes >= 0x80 count as
/// letters) and single punctuation characters. Special tokens such as [UNK]
/// are kept whole.
std::vector<std::string> split_words(std::string_view text);

/// Joins pieces with spaces, without a space before closing punctuation or
/// after opening brackets.
std::string join_words(std::span<const std::string> words);

/// Word vocabulary whose first ids are the special tokens.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::string_view kMask = "[MASK]";

  /// Only the special tokens.
  Vocabulary();

  /// Words occurring at least min_frequency times, most frequent first (ties
  /// alphabetical), capped at max_size entries including specials (0 = no cap).
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_frequency = 1,
                          std::size_t max_size = 0);
  /// One token per line; the first five lines must be the special tokens.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return words_.size(); }
  const SpecialTokens& special() const { return special_; }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  bool contains(std::string_view word) const;

  /// Word ids without [CLS]/[SEP]; unknown words map to [UNK].
  TokenSequence encode(std::string_view text) const;
  /// Renders ids back to text, dropping [PAD].
  std::string decode(std::span<const TokenId> ids) const;
  std::vector<std::string> words(std::span<const TokenId> ids) const;

 private:
  void add(std::string word);

  SpecialTokens special_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace qac
