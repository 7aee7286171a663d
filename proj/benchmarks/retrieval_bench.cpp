// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "qac/dense.hpp"
#include "qac/sparse.hpp"

namespace {

// Zipf-ish term draws so postings lists have a realistic length spread.
std::vector<qac::TokenSequence> zipf_docs(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w(vocab);
  for (std::size_t i = 0; i < vocab; ++i) w[i] = 1.0 / double(i + 1);
  std::discrete_distribution<int> term(w.begin(), w.end());
  std::uniform_int_distribution<std::size_t> len(20, 120);
  std::vector<qac::TokenSequence> docs(n);
  for (auto& d : docs) {
    d.resize(len(rng));
    for (auto& t : d) t = 5 + term(rng);
  }
  return docs;
}

void BM_Bm25Search(benchmark::State& state) {
  const auto docs = zipf_docs(static_cast<std::size_t>(state.range(0)), 5000, 1);
  const auto index = qac::InvertedIndex::build(docs);
  const auto queries = zipf_docs(64, 5000, 2);
  std::size_t q = 0;
  for (auto _ : state) {
    const auto& query = queries[q++ % queries.size()];
    auto hits = qac::bm25_search(index, std::span(query).first(std::min<std::size_t>(8, query.size())), 1000);
    benchmark::DoNotOptimize(hits.data());
  }
}
BENCHMARK(BM_Bm25Search)->Arg(1000)->Arg(10000);

qac::EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  qac::EmbeddingMatrix m;
  m.dim = dim;
  m.values.resize(rows * dim);
  for (auto& v : m.values) v = d(rng);
  for (std::size_t i = 0; i < rows; ++i) m.ids.push_back(std::to_string(i));
  return m;
}

void BM_DenseSearch(benchmark::State& state) {
  const auto corpus = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 3);
  const auto queries = random_matrix(16, 64, 4);
  for (auto _ : state) {
    auto hits = qac::dense_search_ordinals(corpus, queries, 1000);
    benchmark::DoNotOptimize(hits.data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DenseSearch)->Arg(1000)->Arg(10000);

}  // namespace
