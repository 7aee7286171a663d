// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qac/model.hpp"
#include "qac/tokenizer.hpp"

namespace qac {

inline constexpr std::size_t kMaxPassageTokens = 144;

struct Document {
  std::string doc_id;
  std::string text;
};

struct Passage {
  std::string doc_id;
  std::size_t passage_index = 0;
  TokenSequence tokens;  // no [CLS]

  /// "doc_id#passage_index", the id used in runs, qrels and query files.
  std::string key() const;
};

std::string passage_key(std::string_view doc_id, std::size_t passage_index);

/// Rule-based segmentation: a sentence ends at . ! or ? followed by whitespace
/// and an uppercase letter or digit, unless the word before it is a known
/// abbreviation.
std::vector<std::string> split_sentences(std::string_view text);

/// Greedy packing of tokenized sentences into passages of at most max_tokens.
/// A sentence longer than max_tokens becomes its own truncated passage.
std::vector<Passage> pack_sentences(std::string_view doc_id, std::span<const TokenSequence> sentences,
                                    std::size_t max_tokens = kMaxPassageTokens);

std::vector<Passage> split_document(const Document& doc, const Vocabulary& vocab,
                                    std::size_t max_tokens = kMaxPassageTokens);

/// Passages of a corpus in document order. A passage's position in `passages`
/// is its ordinal in indexes, embedding matrices and runs.
class PassageStore {
 public:
  struct DocumentSpan {
    std::string doc_id;
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  PassageStore() = default;
  static PassageStore from_documents(std::span<const Document> docs, const Vocabulary& vocab,
                                     std::size_t max_tokens = kMaxPassageTokens);
  /// Passages must arrive grouped by document with consecutive indexes from 0.
  explicit PassageStore(std::vector<Passage> passages);

  const std::vector<Passage>& passages() const { return passages_; }
  const std::vector<DocumentSpan>& documents() const { return documents_; }
  std::size_t size() const { return passages_.size(); }
  bool empty() const { return passages_.empty(); }
  const Passage& operator[](std::size_t ordinal) const { return passages_.at(ordinal); }
  /// Ordinal of a passage key; throws DataError if absent.
  std::size_t ordinal(std::string_view key) const;
  bool contains(std::string_view key) const;
  std::vector<std::string> keys() const;

  /// JSON lines {doc_id, passage_index, tokens:[ids]}.
  void save(const std::filesystem::path& path) const;
  static PassageStore load(const std::filesystem::path& path);

 private:
  std::vector<Passage> passages_;
  std::vector<DocumentSpan> documents_;
  std::map<std::string, std::size_t, std::less<>> ordinals_;
};

struct CandidateQuerySet {
  std::string doc_id;
  std::size_t passage_index = 0;
  std::vector<TokenSequence> queries;

  std::string key() const { return passage_key(doc_id, passage_index); }
};

using QueryMap = std::map<std::string, CandidateQuerySet, std::less<>>;

enum class PairKind { passage_passage, passage_query };

std::string_view to_string(PairKind kind);

struct TrainingPair {
  PairKind kind = PairKind::passage_passage;
  std::string doc_id;
  std::size_t x_index = 0;  // passage_index of x
  std::size_t x_ordinal = 0;
  /// passage_index of y for passage-passage pairs, candidate index for passage-query pairs.
  std::size_t y_source = 0;
  TokenSequence x;
  TokenSequence y;
};

/// One uniformly drawn ordered pair of distinct passages per document;
/// single-passage documents pair the passage with itself.
std::vector<TrainingPair> make_passage_pairs(const PassageStore& store, std::mt19937_64& rng);

/// One pair per passage with y drawn uniformly from its candidate queries.
std::vector<TrainingPair> make_query_pairs(const PassageStore& store, const QueryMap& queries, std::mt19937_64& rng);

/// One pair per passage: a passage-query pair with probability
/// query_probability, else x paired with a uniformly drawn sibling passage.
std::vector<TrainingPair> make_mixed_pairs(const PassageStore& store, const QueryMap& queries, std::mt19937_64& rng,
                                           double query_probability = 0.5);

/// Corpus file: JSON lines {doc_id, text}.
std::vector<Document> read_documents(const std::filesystem::path& path);
void write_documents(const std::filesystem::path& path, std::span<const Document> docs);

/// Query file: JSON lines {doc_id, passage_index, queries:[strings]}.
QueryMap read_queries(const std::filesystem::path& path, const Vocabulary& vocab);
void write_queries(const std::filesystem::path& path, const QueryMap& queries, const Vocabulary& vocab);

/// Pair dump: JSON lines {kind, x_tokens, y_tokens, provenance}.
void write_pairs(const std::filesystem::path& path, std::span<const TrainingPair> pairs, const Vocabulary& vocab);

}  // namespace qac
