// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qac/config.hpp"
#include "qac/corpus.hpp"
#include "qac/dense.hpp"
#include "qac/eval.hpp"
#include "qac/model.hpp"
#include "qac/negatives.hpp"
#include "qac/sparse.hpp"
#include "qac/tokenizer.hpp"

namespace qac {

/// Independent, reproducible seed for a named random stream of a run.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream);

ModelParts parts_for(Objective objective);

struct PreparedCorpus {
  Vocabulary vocab;
  PassageStore store;
  InvertedIndex index;
  std::vector<TokenId> bm25_stopwords;
  std::vector<TokenId> query_stopwords;
};

/// Vocabulary, passages and BM25 index for a document set. Throws DataError
/// when there are no documents.
PreparedCorpus prepare_corpus(const ExperimentConfig& config, std::span<const Document> docs);

/// Candidate queries for every passage from the configured provider.
QueryMap provide_queries(const ExperimentConfig& config, const PreparedCorpus& corpus);
QueryMap lexical_queries(const PreparedCorpus& corpus, std::size_t count, std::uint64_t seed);

std::vector<TrainingPair> make_pairs(ContextMode mode, const PassageStore& store, const QueryMap& queries,
                                     std::mt19937_64& rng, double mix_probability);

struct StepRecord {
  std::string phase;
  std::size_t step = 0;
  double learning_rate = 0.0;
  std::vector<std::pair<std::string, double>> losses;  // "total" first
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Pre-trains a fresh model (heads included) with the configured objective
/// and context mode. Throws NumericError naming the step and components when
/// a loss turns non-finite.
Model<float> pretrain_model(const ExperimentConfig& config, const ModelConfig& model_config,
                            const PassageStore& store, const QueryMap& queries, const StepObserver& observer = {});

/// The encoder every fine-tuning arm starts from when no pre-training is used.
Model<float> initial_encoder(const ExperimentConfig& config, const ModelConfig& model_config);

struct LabeledQuery {
  std::string qid;
  TokenSequence tokens;
  std::vector<std::size_t> positives;  // passage ordinals
};

using NegativePools = std::vector<std::vector<NegativeCandidate>>;

NegativePools bm25_negative_pools(const PreparedCorpus& corpus, std::span<const LabeledQuery> queries,
                                  std::size_t depth, const Bm25Params& params);
NegativePools dense_negative_pools(const Model<float>& retriever, const PassageStore& store,
                                   std::span<const LabeledQuery> queries, std::size_t depth, std::size_t batch_size);

/// InfoNCE fine-tuning of a shared-weight bi-encoder: each query is scored
/// against every positive and sampled hard negative of its batch.
Model<float> finetune_retriever(const FinetuneSettings& settings, const Model<float>& init,
                                const PassageStore& store, std::span<const LabeledQuery> queries,
                                const NegativePools& pools, std::uint64_t seed, std::string_view phase,
                                const StepObserver& observer = {});

EmbeddingMatrix encode_queries(const Model<float>& model, std::span<const LabeledQuery> queries,
                               std::size_t batch_size);
RankedRun retrieve(const Model<float>& model, const PassageStore& store, std::span<const LabeledQuery> queries,
                   std::size_t depth, std::size_t batch_size);
RankedRun retrieve_bm25(const PreparedCorpus& corpus, std::span<const LabeledQuery> queries, std::size_t depth,
                        const Bm25Params& params);
QrelSet qrels_for(const PassageStore& store, std::span<const LabeledQuery> queries);

struct RetrievalScores {
  double mrr10 = 0.0;
  double recall50 = 0.0;
  double recall1000 = 0.0;
};

RetrievalScores score_run(const RankedRun& run, const QrelSet& qrels);

struct ExperimentOutcome {
  RetrievalScores retriever1;
  RetrievalScores retriever2;
  double pretrain_first_loss = 0.0;
  double pretrain_last_loss = 0.0;
};

/// Pre-training (unless finetune.init = random), stage-1 fine-tuning on BM25
/// negatives, stage-2 fine-tuning on negatives mined by retriever 1, and
/// evaluation of both retrievers on the test queries.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const PreparedCorpus& corpus,
                                 const QueryMap& candidates, std::span<const LabeledQuery> train,
                                 std::span<const LabeledQuery> test, const StepObserver& observer = {});

/// Held-out style queries: disjoint passage sets for training and testing,
/// one lexical query each, drawn from a stream independent of the candidates.
std::pair<std::vector<LabeledQuery>, std::vector<LabeledQuery>> make_labeled_queries(
    const PreparedCorpus& corpus, std::size_t train_count, std::size_t test_count, std::uint64_t seed);

/// "qid<TAB>text" lines, plus qrels naming positive passage keys.
void write_labeled_queries(const std::filesystem::path& queries_path, const std::filesystem::path& qrels_path,
                           std::span<const LabeledQuery> queries, const PreparedCorpus& corpus);
std::vector<LabeledQuery> read_labeled_queries(const std::filesystem::path& queries_path,
                                               const std::filesystem::path& qrels_path, const Vocabulary& vocab,
                                               const PassageStore& store);
/// Queries only ("qid<TAB>text"); positives left empty.
std::vector<LabeledQuery> read_query_texts(const std::filesystem::path& queries_path, const Vocabulary& vocab);

}  // namespace qac
