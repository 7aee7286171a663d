// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qac/config.hpp"
#include "qac/manifest.hpp"
#include "qac/pipeline.hpp"
#include "qac/synthetic.hpp"

namespace qac {

/// Artifact layout of a run directory. Each stage owns one subdirectory and
/// writes manifest.json there last.
struct StageDirs {
  explicit StageDirs(std::filesystem::path workdir);

  std::filesystem::path root;
  std::filesystem::path prep;
  std::filesystem::path pretrain;
  std::filesystem::path finetune1;
  std::filesystem::path finetune2;

  const std::filesystem::path& finetune(int stage) const;
};

/// Reads the prep stage's outputs back into memory.
PreparedCorpus load_prepared(const StageDirs& dirs);
QueryMap load_candidates(const StageDirs& dirs, const Vocabulary& vocab);

/// Splits the corpus, builds vocabulary and BM25 index, provides candidate
/// queries and dumps one epoch of training pairs.
Manifest run_prep(const ExperimentConfig& config);
/// Pre-trains and saves model.ckpt (encoder only) and full.ckpt (with heads).
Manifest run_pretrain(const ExperimentConfig& config, const StepObserver& observer = {});
/// Stage 1 trains on BM25 negatives; stage 2 on negatives mined by the stage-1
/// retriever. Both start from the pre-trained encoder (or a fresh one when
/// finetune.init = random).
Manifest run_finetune(const ExperimentConfig& config, int stage, const StepObserver& observer = {});
/// Encodes every passage with a checkpoint into an embedding matrix file.
Manifest run_encode(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& output);

enum class SearchEngine { bm25, dense };

struct SearchRequest {
  SearchEngine engine = SearchEngine::dense;
  std::filesystem::path queries;     // "qid<TAB>text"
  std::filesystem::path output;      // TREC run
  std::filesystem::path checkpoint;  // dense only
  std::filesystem::path embeddings;  // dense only; encoded on the fly when empty
  std::size_t depth = 1000;
};

Manifest run_search(const ExperimentConfig& config, const SearchRequest& request);

struct EvalReport {
  std::vector<std::string> metrics;
  std::vector<MetricValue> values;

  std::string to_text() const;
  std::string to_json() const;
  static EvalReport from_json(std::string_view text);
};

EvalReport run_eval(const std::filesystem::path& run, const std::filesystem::path& qrels,
                    std::span<const std::string> metrics);

struct AblationRow {
  std::string label;
  RetrievalScores retriever1;
  RetrievalScores retriever2;
};

struct AblationTable {
  std::string sweep;
  std::vector<AblationRow> rows;

  std::string to_markdown() const;
  std::string to_json() const;
};

/// Runs the in-memory pipeline once per value of `sweep`, which is
/// "queries.count" or "pretrain.context" (any config key is accepted).
AblationTable run_ablation(const ExperimentConfig& config, std::string_view sweep,
                           std::span<const std::string> values, const StepObserver& observer = {});

/// Writes a synthetic corpus plus training and test queries with qrels into
/// `directory`: corpus.jsonl, train.tsv, train.qrels, test.tsv, test.qrels.
void write_synthetic_task(const ExperimentConfig& config, const SyntheticCorpusSpec& spec,
                          std::size_t train_queries, std::size_t test_queries,
                          const std::filesystem::path& directory);

/// Trains a toy query generator (encoder + CoT-MAE decoder) on lexical
/// queries of the configured corpus and saves it.
void run_train_generator(const ExperimentConfig& config, const GeneratorTraining& training,
                         const std::filesystem::path& output);

}  // namespace qac
