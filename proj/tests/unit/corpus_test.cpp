// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "qac/corpus.hpp"
#include "qac/error.hpp"
#include "qac/synthetic.hpp"
#include "qac/tokenizer.hpp"

namespace qac {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "qac-corpus-test";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// ---------------------------------------------------------------------------
// Tokenizer

TEST(Tokenizer, SplitsWordsAndPunctuation) {
  EXPECT_EQ(split_words("Hello, World! It's 3.5%"),
            (std::vector<std::string>{"hello", ",", "world", "!", "it", "'", "s", "3", ".", "5", "%"}));
  EXPECT_EQ(split_words("[CLS] a [MASK] b"), (std::vector<std::string>{"[CLS]", "a", "[MASK]", "b"}));
  EXPECT_EQ(split_words("  \t\n "), std::vector<std::string>{});
  EXPECT_EQ(split_words("caf\xc3\xa9 ok"), (std::vector<std::string>{"caf\xc3\xa9", "ok"}));
}

TEST(Tokenizer, JoinUndoesSpacingAroundPunctuation) {
  const std::vector<std::string> w{"hello", ",", "world", "(", "x", ")", "costs", "$", "5", "."};
  EXPECT_EQ(join_words(w), "hello, world (x) costs $5.");
}

TEST(Vocabulary, SpecialsFirstThenFrequencyThenAlphabetical) {
  const std::vector<std::string> texts{"b a c", "a b", "a d"};
  const auto v = Vocabulary::build(texts);
  EXPECT_EQ(v.word(0), "[PAD]");
  EXPECT_EQ(v.word(4), "[MASK]");
  EXPECT_EQ(v.word(5), "a");
  EXPECT_EQ(v.word(6), "b");
  EXPECT_EQ(v.word(7), "c");
  EXPECT_EQ(v.word(8), "d");
  EXPECT_EQ(v.size(), 9u);
}

TEST(Vocabulary, MinFrequencyAndCap) {
  const std::vector<std::string> texts{"x x x y y z"};
  EXPECT_EQ(Vocabulary::build(texts, 2).size(), 7u);
  EXPECT_EQ(Vocabulary::build(texts, 1, 6).size(), 6u);
}

TEST(Vocabulary, EncodeDecodeAndUnknown) {
  const std::vector<std::string> texts{"the cat sat ."};
  const auto v = Vocabulary::build(texts);
  const auto ids = v.encode("The dog sat.");
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids[1], v.special().unk);
  EXPECT_EQ(v.decode(ids), "the [UNK] sat.");
  EXPECT_THROW(v.word(99), IndexError);
}

TEST(Vocabulary, SaveLoadRoundTripAndValidation) {
  const std::vector<std::string> texts{"alpha beta gamma beta"};
  const auto v = Vocabulary::build(texts);
  const auto p = scratch("vocab.txt");
  v.save(p);
  const auto back = Vocabulary::load(p);
  ASSERT_EQ(back.size(), v.size());
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) EXPECT_EQ(back.word(i), v.word(i));
  write_file(p, "[PAD]\n[CLS]\n[UNK]\n[SEP]\n[MASK]\nword\n");
  EXPECT_THROW(Vocabulary::load(p), DataError);
  write_file(p, "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nword\nword\n");
  EXPECT_THROW(Vocabulary::load(p), DataError);
}

// ---------------------------------------------------------------------------
// Sentences and packing

TEST(Sentences, SplitsOnTerminatorsFollowedByCapital) {
  EXPECT_EQ(split_sentences("One two. Three four! Five? 6 is a digit."),
            (std::vector<std::string>{"One two.", "Three four!", "Five?", "6 is a digit."}));
}

TEST(Sentences, KeepsAbbreviationsDecimalsAndLowercaseContinuations) {
  EXPECT_EQ(split_sentences("Dr. Smith met Mr. J. Doe at 3.5 p.m. today. Then left."),
            (std::vector<std::string>{"Dr. Smith met Mr. J. Doe at 3.5 p.m. today.", "Then left."}));
  EXPECT_EQ(split_sentences("e.g. this. and that"), (std::vector<std::string>{"e.g. this. and that"}));
}

TEST(Sentences, QuotesCloseSentences) {
  EXPECT_EQ(split_sentences("He said \"go.\" She went."), (std::vector<std::string>{"He said \"go.\"", "She went."}));
}

TEST(Packing, GreedyWithinLimit) {
  const std::vector<TokenSequence> s{{5, 5, 5}, {6, 6}, {7, 7, 7, 7}, {8}};
  const auto p = pack_sentences("d", s, 5);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].tokens, (TokenSequence{5, 5, 5, 6, 6}));
  EXPECT_EQ(p[1].tokens, (TokenSequence{7, 7, 7, 7, 8}));
  EXPECT_EQ(p[1].passage_index, 1u);
  EXPECT_EQ(p[1].key(), "d#1");
}

TEST(Packing, OverLongSentenceIsTruncated) {
  const std::vector<TokenSequence> s{TokenSequence(200, 9), {5}};
  const auto p = pack_sentences("d", s);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].tokens.size(), kMaxPassageTokens);
  EXPECT_EQ(p[1].tokens, TokenSequence{5});
}

TEST(Packing, ZeroLimitIsConfigError) {
  EXPECT_THROW(pack_sentences("d", std::vector<TokenSequence>{{5}}, 0), ConfigError);
}

TEST(PassageStore, OrdinalsKeysAndSpans) {
  const std::vector<Document> docs{{"a", "One. Two."}, {"b", "Three."}};
  const std::vector<std::string> texts{docs[0].text, docs[1].text};
  const auto vocab = Vocabulary::build(texts);
  const auto store = PassageStore::from_documents(docs, vocab, 2);
  ASSERT_EQ(store.size(), 3u);
  EXPECT_EQ(store.ordinal("a#1"), 1u);
  EXPECT_EQ(store.ordinal("b#0"), 2u);
  EXPECT_THROW(store.ordinal("b#1"), DataError);
  ASSERT_EQ(store.documents().size(), 2u);
  EXPECT_EQ(store.documents()[0].end, 2u);
  EXPECT_EQ(store.keys(), (std::vector<std::string>{"a#0", "a#1", "b#0"}));
}

TEST(PassageStore, RejectsDuplicatesAndDisorder) {
  const std::vector<Document> docs{{"a", "x"}, {"a", "y"}};
  const std::vector<std::string> texts{"x y"};
  EXPECT_THROW(PassageStore::from_documents(docs, Vocabulary::build(texts)), DataError);
  std::vector<Passage> bad{{"a", 1, {5}}};
  EXPECT_THROW(PassageStore{bad}, DataError);
}

TEST(PassageStore, SaveLoadRoundTrip) {
  std::vector<Passage> ps{{"a", 0, {5, 6}}, {"a", 1, {7}}, {"b", 0, {8, 9, 10}}};
  const PassageStore store(ps);
  const auto p = scratch("passages.jsonl");
  store.save(p);
  const auto back = PassageStore::load(p);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].key(), store[i].key());
    EXPECT_EQ(back[i].tokens, store[i].tokens);
  }
}

// ---------------------------------------------------------------------------
// Pairs

PassageStore sibling_store(std::size_t docs, std::size_t per_doc) {
  std::vector<Passage> ps;
  for (std::size_t d = 0; d < docs; ++d) {
    for (std::size_t i = 0; i < per_doc; ++i) ps.push_back({"d" + std::to_string(d), i, {static_cast<TokenId>(5 + i)}});
  }
  return PassageStore(ps);
}

QueryMap candidate_map(const PassageStore& store, std::size_t count) {
  QueryMap m;
  for (const auto& p : store.passages()) {
    CandidateQuerySet set{p.doc_id, p.passage_index, {}};
    for (std::size_t j = 0; j < count; ++j) set.queries.push_back({static_cast<TokenId>(100 + j)});
    m.emplace(set.key(), set);
  }
  return m;
}

TEST(Pairs, PassagePairsAreDistinctSiblingsAndUniform) {
  const auto store = sibling_store(300, 3);
  std::mt19937_64 rng(1);
  std::map<std::pair<std::size_t, std::size_t>, double> counts;
  double n = 0;
  for (int epoch = 0; epoch < 30; ++epoch) {
    const auto pairs = make_passage_pairs(store, rng);
    ASSERT_EQ(pairs.size(), 300u);
    for (const auto& p : pairs) {
      ASSERT_EQ(p.kind, PairKind::passage_passage);
      ASSERT_NE(p.x_index, p.y_source);
      ASSERT_EQ(p.y, (TokenSequence{static_cast<TokenId>(5 + p.y_source)}));
      counts[{p.x_index, p.y_source}] += 1;
      n += 1;
    }
  }
  ASSERT_EQ(counts.size(), 6u);  // every ordered pair of 3 siblings
  const double q = 1.0 / 6.0;
  for (const auto& [pair, c] : counts) EXPECT_LE(std::abs(c - n * q), 3 * std::sqrt(n * q * (1 - q)));
}

TEST(Pairs, SinglePassageDocumentPairsWithItself) {
  const auto store = sibling_store(2, 1);
  std::mt19937_64 rng(2);
  for (const auto& p : make_passage_pairs(store, rng)) EXPECT_EQ(p.x, p.y);
}

TEST(Pairs, QueryPairsCoverEveryPassage) {
  const auto store = sibling_store(10, 2);
  const auto queries = candidate_map(store, 4);
  std::mt19937_64 rng(3);
  const auto pairs = make_query_pairs(store, queries, rng);
  ASSERT_EQ(pairs.size(), store.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].kind, PairKind::passage_query);
    EXPECT_EQ(pairs[i].x_ordinal, i);
    EXPECT_EQ(pairs[i].y, (TokenSequence{static_cast<TokenId>(100 + pairs[i].y_source)}));
  }
}

TEST(Pairs, CandidateSelectionIsUniformOnAverage) {
  // Over many seeds the per-candidate chi-square statistic averages its
  // degrees of freedom; a biased sampler drifts far above it.
  const auto store = sibling_store(100, 1);
  for (std::size_t c : {5, 20}) {
    const auto queries = candidate_map(store, c);
    double chi_sum = 0.0;
    const int seeds = 60;
    for (int s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(s);
      std::vector<double> counts(c, 0.0);
      double n = 0;
      for (int e = 0; e < 50; ++e) {
        for (const auto& p : make_query_pairs(store, queries, rng)) {
          counts[p.y_source] += 1;
          n += 1;
        }
      }
      for (double k : counts) chi_sum += (k - n / double(c)) * (k - n / double(c)) / (n / double(c));
    }
    const double df = double(c - 1);
    const double mean = chi_sum / seeds;
    // The mean of 60 chi-square(df) draws has standard deviation sqrt(2 df / 60).
    EXPECT_LE(std::abs(mean - df), 4 * std::sqrt(2 * df / seeds)) << "C=" << c;
  }
}

TEST(Pairs, MissingCandidatesIsDataError) {
  const auto store = sibling_store(2, 1);
  QueryMap queries;
  std::mt19937_64 rng(4);
  EXPECT_THROW(make_query_pairs(store, queries, rng), DataError);
}

TEST(Pairs, MixedPairsFollowProbability) {
  const auto store = sibling_store(500, 2);
  const auto queries = candidate_map(store, 3);
  std::mt19937_64 rng(5);
  const auto pairs = make_mixed_pairs(store, queries, rng, 0.3);
  ASSERT_EQ(pairs.size(), store.size());
  double q = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].x_ordinal, i);
    q += pairs[i].kind == PairKind::passage_query ? 1 : 0;
  }
  const double n = double(pairs.size());
  EXPECT_LE(std::abs(q - 0.3 * n), 3 * std::sqrt(n * 0.3 * 0.7));
  EXPECT_THROW(make_mixed_pairs(store, queries, rng, 1.5), ConfigError);
  for (const auto& p : make_mixed_pairs(store, queries, rng, 0.0)) EXPECT_EQ(p.kind, PairKind::passage_passage);
  for (const auto& p : make_mixed_pairs(store, queries, rng, 1.0)) EXPECT_EQ(p.kind, PairKind::passage_query);
}

// ---------------------------------------------------------------------------
// Files

TEST(CorpusFiles, DocumentsRoundTripAndErrorsNameLine) {
  const std::vector<Document> docs{{"a", "Hello there."}, {"b", "Second \"quoted\" doc."}};
  const auto p = scratch("docs.jsonl");
  write_documents(p, docs);
  const auto back = read_documents(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].text, docs[1].text);
  write_file(p, "{\"doc_id\": \"a\", \"text\": \"x\"}\n{not json}\n");
  try {
    read_documents(p);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  write_file(p, "{\"doc_id\": \"a\"}\n");
  EXPECT_THROW(read_documents(p), DataError);
  EXPECT_THROW(read_documents(scratch("missing.jsonl")), IoError);
}

TEST(CorpusFiles, QueriesRoundTrip) {
  const std::vector<std::string> texts{"red green blue"};
  const auto vocab = Vocabulary::build(texts);
  QueryMap m;
  m.emplace("d#0", CandidateQuerySet{"d", 0, {vocab.encode("red blue"), vocab.encode("green")}});
  const auto p = scratch("queries.jsonl");
  write_queries(p, m, vocab);
  const auto back = read_queries(p, vocab);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back.at("d#0").queries, m.at("d#0").queries);
}

TEST(Synthetic, TwoSentencesOnDifferentTopics) {
  SyntheticCorpusSpec spec;
  spec.num_documents = 50;
  const auto c = make_synthetic_corpus(spec);
  ASSERT_EQ(c.documents.size(), 50u);
  for (std::size_t d = 0; d < 50; ++d) {
    ASSERT_EQ(c.topics[d].size(), 2u);
    EXPECT_NE(c.topics[d][0], c.topics[d][1]);
    EXPECT_EQ(split_sentences(c.documents[d].text).size(), 2u) << c.documents[d].text;
  }
  const auto again = make_synthetic_corpus(spec);
  EXPECT_EQ(again.documents[7].text, c.documents[7].text);
}

}  // namespace
}  // namespace qac
