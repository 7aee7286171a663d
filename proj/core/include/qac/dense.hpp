// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "qac/corpus.hpp"
#include "qac/eval.hpp"
#include "qac/model.hpp"
#include "qac/negatives.hpp"

namespace qac {

/// Row-major [rows, dim] embeddings with one id per row.
struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::string> ids;

  std::size_t rows() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  /// Throws DataError on a size mismatch and NumericError on NaN/Inf, naming the row id.
  void validate() const;

  /// Binary layout, little-endian:
  ///   u64 count, u64 dim, count*dim f32 values, then count x (u32 length, bytes) ids.
  void save(const std::filesystem::path& path) const;
  static EmbeddingMatrix load(const std::filesystem::path& path);
};

/// [CLS] + tokens, cut to the model's max_seq_len.
TokenSequence model_input(const TokenSequence& tokens, const SpecialTokens& special, std::size_t max_seq_len);

/// h_0^L of each sequence (given without [CLS]). Sequences are batched in
/// length order so padding stays small; row order follows the input.
template <typename T>
EmbeddingMatrix encode_sequences(const Model<T>& model, std::span<const TokenSequence> sequences,
                                 std::span<const std::string> ids, std::size_t batch_size);

template <typename T>
EmbeddingMatrix encode_corpus(const Model<T>& model, const PassageStore& store, std::size_t batch_size);

/// Exact top-k by dot product (accumulated in double, dimension order), ties
/// by ascending ordinal. k larger than the corpus returns the whole corpus.
std::vector<std::vector<RankedCandidate>> dense_search_ordinals(const EmbeddingMatrix& corpus,
                                                                const EmbeddingMatrix& queries, std::size_t k);
RankedRun dense_search(const EmbeddingMatrix& corpus, const EmbeddingMatrix& queries, std::size_t k);

/// Uniform sample of n from the top-`depth` of ranked minus positives.
MinedNegatives mine_dense_negatives(std::span<const RankedCandidate> ranked,
                                    const std::unordered_set<std::size_t>& positives, std::size_t depth,
                                    std::size_t n, std::size_t corpus_size, std::mt19937_64& rng);

}  // namespace qac
