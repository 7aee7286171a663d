// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/synthetic.hpp"

#include <cctype>
#include <random>
#include <set>

#include "qac/error.hpp"

namespace qac {

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};

std::string make_word(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1);
  std::uniform_int_distribution<std::size_t> vowel(0, std::size(kVowels) - 1);
  std::uniform_int_distribution<int> syllables(2, 3);
  std::string w;
  for (int s = syllables(rng); s > 0; --s) {
    w += kOnsets[onset(rng)];
    w += kVowels[vowel(rng)];
  }
  return w;
}

}  // namespace

const std::vector<std::string>& english_stopwords() {
  static const std::vector<std::string> kWords = {
      "a",    "about", "after", "all",   "also",  "an",    "and",   "any",   "are",  "as",   "at",    "be",
      "been", "but",   "by",    "can",   "could", "did",   "do",    "does",  "each", "for",  "from",  "had",
      "has",  "have",  "he",    "her",   "his",   "how",   "if",    "in",    "into", "is",   "it",    "its",
      "more", "most",  "no",    "not",   "of",    "on",    "one",   "only",  "or",   "other", "our",  "she",
      "so",   "some",  "such",  "than",  "that",  "the",   "their", "them",  "then", "there", "these", "they",
      "this", "those", "to",    "under", "up",    "was",   "we",    "were",  "what", "when", "where", "which",
      "while", "who",  "will",  "with",  "would", "you",   "your"};
  return kWords;
}

void SyntheticCorpusSpec::validate() const {
  if (num_documents == 0) throw ConfigError("synthetic.num_documents: must be positive");
  if (num_topics < 2) throw ConfigError("synthetic.num_topics: need at least 2 topics");
  if (words_per_topic == 0) throw ConfigError("synthetic.words_per_topic: must be positive");
  if (min_sentence_words == 0 || min_sentence_words > max_sentence_words) {
    throw ConfigError("synthetic.min_sentence_words: must be in [1, max_sentence_words]");
  }
  if (!(content_ratio > 0.0 && content_ratio <= 1.0)) throw ConfigError("synthetic.content_ratio: must lie in (0,1]");
}

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticCorpus out;

  std::set<std::string> used(english_stopwords().begin(), english_stopwords().end());
  out.topic_words.resize(spec.num_topics);
  for (auto& pool : out.topic_words) {
    while (pool.size() < spec.words_per_topic) {
      auto w = make_word(rng);
      if (used.insert(w).second) pool.push_back(std::move(w));
    }
  }

  const auto& stop = english_stopwords();
  std::uniform_int_distribution<std::size_t> topic_dist(0, spec.num_topics - 1);
  std::uniform_int_distribution<std::size_t> other_dist(0, spec.num_topics - 2);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_sentence_words, spec.max_sentence_words);
  std::uniform_int_distribution<std::size_t> word_dist(0, spec.words_per_topic - 1);
  std::uniform_int_distribution<std::size_t> stop_dist(0, stop.size() - 1);
  std::bernoulli_distribution content(spec.content_ratio);

  auto sentence = [&](std::size_t topic) {
    std::string s;
    const auto n = length_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& w = content(rng) ? out.topic_words[topic][word_dist(rng)] : stop[stop_dist(rng)];
      if (!s.empty()) s.push_back(' ');
      s += w;
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + ".";
  };

  const auto width = std::to_string(spec.num_documents - 1).size();
  for (std::size_t d = 0; d < spec.num_documents; ++d) {
    const auto own = topic_dist(rng);
    auto other = other_dist(rng);
    if (other >= own) ++other;
    auto id = std::to_string(d);
    id.insert(0, width - id.size(), '0');
    out.documents.push_back({"D" + id, sentence(own) + " " + sentence(other)});
    out.topics.push_back({own, other});
  }
  return out;
}

}  // namespace qac
