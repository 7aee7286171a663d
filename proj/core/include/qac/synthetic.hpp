// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qac/corpus.hpp"

namespace qac {

/// Topic-structured toy corpus. Every document holds one sentence on its own
/// topic followed by one sentence on a different, randomly chosen topic, so a
/// passage's sibling is unrelated to it.
struct SyntheticCorpusSpec {
  std::size_t num_documents = 400;
  std::size_t num_topics = 20;
  std::size_t words_per_topic = 40;
  std::size_t min_sentence_words = 10;
  std::size_t max_sentence_words = 18;
  /// Fraction of sentence words drawn from the topic pool; the rest are stopwords.
  double content_ratio = 0.7;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  /// Topic of each sentence, indexed [document][sentence].
  std::vector<std::vector<std::size_t>> topics;
  std::vector<std::vector<std::string>> topic_words;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusSpec& spec);

/// A fixed English stoplist.
const std::vector<std::string>& english_stopwords();

}  // namespace qac
