// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <unordered_set>
#include <vector>

#include "qac/model.hpp"
#include "qac/negatives.hpp"

namespace qac {

class Vocabulary;

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;

  void validate() const;
};

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

/// Term -> postings over a fixed document set. Immutable once built.
class InvertedIndex {
 public:
  /// Throws DataError for an empty document set. Stopword ids are left out
  /// of both postings and document lengths.
  static InvertedIndex build(std::span<const TokenSequence> docs, std::span<const TokenId> stopwords = {});

  std::size_t num_docs() const { return doc_lengths_.size(); }
  double average_length() const { return average_length_; }
  std::uint32_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }
  const std::map<TokenId, std::vector<Posting>>& terms() const { return postings_; }
  /// Empty span for an unknown term.
  std::span<const Posting> postings(TokenId term) const;
  std::size_t document_frequency(TokenId term) const { return postings(term).size(); }
  /// ln(1 + (N - df + 0.5) / (df + 0.5)).
  double idf(TokenId term) const;

  /// Binary layout, all integers little-endian:
  ///   "QACBM25\0" u32 version, u64 N, u32 doc lengths[N], u64 term count,
  ///   then per term (ascending id): i32 term, u64 df, df x (u32 doc, u32 tf).
  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);
  /// One line per term: "term df doc:tf doc:tf ...".
  void dump(std::ostream& out, const Vocabulary* vocab = nullptr) const;

  bool operator==(const InvertedIndex&) const = default;

 private:
  std::map<TokenId, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> doc_lengths_;
  double average_length_ = 0.0;
};

/// Okapi BM25 over the distinct query terms. Top-k by score, ties by
/// ascending document ordinal; documents matching no term are not returned.
std::vector<RankedCandidate> bm25_search(const InvertedIndex& index, std::span<const TokenId> query, std::size_t k,
                                         const Bm25Params& params = {});

/// Score of one document, for audits and tests.
double bm25_score(const InvertedIndex& index, std::span<const TokenId> query, std::size_t doc,
                  const Bm25Params& params = {});

MinedNegatives mine_bm25_negatives(const InvertedIndex& index, std::span<const TokenId> query,
                                   const std::unordered_set<std::size_t>& positives, std::size_t depth, std::size_t n,
                                   std::mt19937_64& rng, const Bm25Params& params = {});

}  // namespace qac
