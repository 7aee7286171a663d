// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <unordered_set>
#include <vector>

#include "qac/corpus.hpp"
#include "qac/model.hpp"

namespace qac {

inline constexpr std::size_t kMaxQueryTokens = 32;

struct SamplingSpec {
  double top_p = 0.95;
  std::size_t top_k = 25;
  std::uint64_t seed = 42;
  std::size_t max_query_len = kMaxQueryTokens;

  void validate() const;
};

/// Truncated, renormalised distribution: ids in descending probability order.
struct NucleusSupport {
  std::vector<std::size_t> ids;
  std::vector<double> probs;
};

/// Keeps the top_k most probable entries, then the shortest prefix of those
/// whose cumulative mass reaches top_p (the boundary entry is included).
/// Ties keep the lower id first. Zero-probability entries never enter.
NucleusSupport nucleus_support(std::span<const double> dist, const SamplingSpec& spec);
std::size_t nucleus_sample(std::span<const double> dist, const SamplingSpec& spec, std::mt19937_64& rng);

/// Stand-in query generator: queries are 3-8 passage tokens drawn without
/// replacement with weight tf x idf.
class LexicalQuerySampler {
 public:
  LexicalQuerySampler(const PassageStore& store, std::span<const TokenId> stopwords, const SpecialTokens& special);

  /// `count` distinct queries. A passage with no content tokens falls back to
  /// uniform sampling over its non-special tokens.
  CandidateQuerySet sample(const Passage& passage, std::size_t count, std::mt19937_64& rng) const;
  TokenSequence sample_one(const TokenSequence& passage, std::mt19937_64& rng) const;
  double idf(TokenId id) const;

  static constexpr std::size_t kMinTokens = 3;
  static constexpr std::size_t kMaxTokens = 8;

 private:
  bool is_content(TokenId id) const;

  SpecialTokens special_;
  std::unordered_set<TokenId> stopwords_;
  std::vector<std::size_t> df_;
  std::size_t passages_ = 0;
};

/// Token ids of the stoplist words present in the vocabulary, plus every
/// punctuation-only token.
std::vector<TokenId> stopword_ids(const Vocabulary& vocab, std::span<const std::string> words);

/// Queries for every passage of the store.
QueryMap generate_lexical_queries(const PassageStore& store, const LexicalQuerySampler& sampler, std::size_t count,
                                  std::uint64_t seed);

/// Autoregressive query decoding with the CoT-MAE decoder: the passage
/// embedding conditions position 0, the next token is read at a trailing
/// [MASK], decoding stops at [SEP] or max_query_len.
template <typename T>
TokenSequence toy_seq2seq_generate(const Model<T>& model, const TokenSequence& passage, const SamplingSpec& spec,
                                   std::mt19937_64& rng);

/// Loads a generator checkpoint; throws LoadError when it is missing or has no decoder.
Model<float> load_generator(const std::filesystem::path& checkpoint);

struct GeneratorTraining {
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
};

/// Teaches the decoder next-token prediction of y given x: each example cuts
/// a query at a random prefix and predicts the token after it ([SEP] at the end).
void train_generator(Model<float>& model, std::span<const TrainingPair> pairs, const GeneratorTraining& settings);

}  // namespace qac
