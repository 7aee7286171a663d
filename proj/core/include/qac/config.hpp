// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qac/model.hpp"
#include "qac/objectives.hpp"
#include "qac/querygen.hpp"
#include "qac/sparse.hpp"

namespace qac {

enum class Objective { mlm, cocondenser, cotmae };
enum class ContextMode { passage, query, mixed };
enum class QueryProvider { lexical, file, seq2seq };
enum class FinetuneInit { pretrained, random };

std::string_view to_string(Objective v);
std::string_view to_string(ContextMode v);
std::string_view to_string(QueryProvider v);
std::string_view to_string(FinetuneInit v);

struct CorpusSettings {
  std::string input;
  std::size_t max_passage_tokens = kMaxPassageTokens;
  std::size_t min_frequency = 1;
  std::size_t max_vocab = 0;
  /// BM25 stopword policy: "none" or "english".
  std::string stopwords = "none";
};

struct QuerySettings {
  QueryProvider provider = QueryProvider::lexical;
  std::size_t count = 5;  // C
  std::string file;       // provider = file
  std::string generator;  // provider = seq2seq
  SamplingSpec sampling;
};

struct PretrainSettings {
  Objective objective = Objective::cocondenser;
  ContextMode context = ContextMode::query;
  double mix_probability = 0.5;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double temperature = 1.0;
  /// Encoder mask rate; unset means 0.30 for CoT-MAE, 0.15 otherwise.
  std::optional<double> mask_rate;
  double decoder_mask_rate = 0.45;
  double mask_token_prob = 0.8;
  double random_token_prob = 0.1;
  double keep_prob = 0.1;

  double encoder_mask_rate() const;
  MaskingSpec encoder_masking(std::uint64_t seed) const;
  MaskingSpec decoder_masking(std::uint64_t seed) const;
};

struct FinetuneSettings {
  FinetuneInit init = FinetuneInit::pretrained;
  std::string train_queries;  // TSV "qid<TAB>text"
  std::string train_qrels;
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double warmup_ratio = 0.1;
  double weight_decay = 0.0;
  std::size_t negatives = 15;
  std::size_t negative_depth = 200;
};

struct EvalSettings {
  std::string queries;
  std::string qrels;
  std::vector<std::string> metrics = {"mrr@10", "recall@50", "recall@1000"};
  std::size_t depth = 1000;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string workdir = "qac-run";
  std::size_t log_every = 50;
  ModelConfig model;
  /// 0 sizes the vocabulary from the corpus.
  std::size_t vocab_size_override = 0;
  CorpusSettings corpus;
  QuerySettings queries;
  PretrainSettings pretrain;
  FinetuneSettings finetune;
  EvalSettings eval;
  Bm25Params bm25;
  std::size_t encode_batch_size = 64;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  /// Every key with its current value, as an INI document.
  std::string dump() const;
  /// dump() without keys that do not affect results (workdir, log cadence).
  std::string canonical() const;

  /// Applies "section.key=value"; throws ConfigError for unknown keys or bad values.
  void set(std::string_view assignment);
  void set(std::string_view section, std::string_view key, std::string_view value);
};

/// Reads an INI file on top of the defaults. Unknown sections or keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(std::string_view text);

/// Model configuration with the vocabulary size resolved.
ModelConfig resolve_model_config(const ExperimentConfig& config, std::size_t vocabulary_size);

}  // namespace qac
