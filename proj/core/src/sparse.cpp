// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/sparse.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <set>
#include <string>

#include "qac/error.hpp"
#include "qac/tokenizer.hpp"

namespace qac {

namespace {

constexpr char kMagic[8] = {'Q', 'A', 'C', 'B', 'M', '2', '5', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "index files are written in host order");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw LoadError(path + ": truncated index file");
  return value;
}

bool ranks_before(const RankedCandidate& a, const RankedCandidate& b) {
  return a.score > b.score || (a.score == b.score && a.ordinal < b.ordinal);
}

}  // namespace

void Bm25Params::validate() const {
  if (!(k1 >= 0.0) || !std::isfinite(k1)) throw ConfigError("bm25.k1: must be a finite value >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("bm25.b: must lie in [0,1]");
}

InvertedIndex InvertedIndex::build(std::span<const TokenSequence> docs, std::span<const TokenId> stopwords) {
  if (docs.empty()) throw DataError("cannot index an empty corpus");
  if (docs.size() > UINT32_MAX) throw DataError("corpus too large for 32-bit document ordinals");
  const std::set<TokenId> stop(stopwords.begin(), stopwords.end());
  InvertedIndex index;
  index.doc_lengths_.reserve(docs.size());
  std::uint64_t total = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::map<TokenId, std::uint32_t> tf;
    std::uint32_t length = 0;
    for (auto t : docs[d]) {
      if (stop.contains(t)) continue;
      ++tf[t];
      ++length;
    }
    for (const auto& [t, n] : tf) index.postings_[t].push_back({static_cast<std::uint32_t>(d), n});
    index.doc_lengths_.push_back(length);
    total += length;
  }
  index.average_length_ = double(total) / double(docs.size());
  return index;
}

std::span<const Posting> InvertedIndex::postings(TokenId term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return {};
  return it->second;
}

double InvertedIndex::idf(TokenId term) const {
  const double df = double(document_frequency(term));
  const double n = double(num_docs());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

void InvertedIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, doc_lengths_.size());
  for (auto len : doc_lengths_) put<std::uint32_t>(out, len);
  put<std::uint64_t>(out, postings_.size());
  for (const auto& [term, list] : postings_) {
    put<std::int32_t>(out, term);
    put<std::uint64_t>(out, list.size());
    for (const auto& p : list) {
      put<std::uint32_t>(out, p.doc);
      put<std::uint32_t>(out, p.tf);
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open index " + path.string());
  const auto name = path.string();
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError(name + ": not an index file");
  }
  if (auto v = get<std::uint32_t>(in, name); v != kVersion) {
    throw LoadError(name + ": unsupported index version " + std::to_string(v));
  }
  InvertedIndex index;
  const auto n = get<std::uint64_t>(in, name);
  std::uint64_t total = 0;
  for (std::uint64_t d = 0; d < n; ++d) {
    index.doc_lengths_.push_back(get<std::uint32_t>(in, name));
    total += index.doc_lengths_.back();
  }
  const auto terms = get<std::uint64_t>(in, name);
  for (std::uint64_t t = 0; t < terms; ++t) {
    const auto term = get<std::int32_t>(in, name);
    const auto df = get<std::uint64_t>(in, name);
    auto& list = index.postings_[term];
    for (std::uint64_t i = 0; i < df; ++i) {
      Posting p{get<std::uint32_t>(in, name), get<std::uint32_t>(in, name)};
      if (p.doc >= n || (!list.empty() && p.doc <= list.back().doc)) throw LoadError(name + ": corrupt postings");
      list.push_back(p);
    }
  }
  if (n == 0) throw LoadError(name + ": index holds no documents");
  index.average_length_ = double(total) / double(n);
  return index;
}

void InvertedIndex::dump(std::ostream& out, const Vocabulary* vocab) const {
  for (const auto& [term, list] : postings_) {
    if (vocab != nullptr && term >= 0 && static_cast<std::size_t>(term) < vocab->size()) {
      out << vocab->word(term);
    } else {
      out << term;
    }
    out << ' ' << list.size();
    for (const auto& p : list) out << ' ' << p.doc << ':' << p.tf;
    out << '\n';
  }
}

std::vector<RankedCandidate> bm25_search(const InvertedIndex& index, std::span<const TokenId> query, std::size_t k,
                                         const Bm25Params& params) {
  if (k == 0) throw ConfigError("bm25_search: k must be at least 1");
  params.validate();
  const std::set<TokenId> terms(query.begin(), query.end());
  std::vector<double> scores(index.num_docs(), 0.0);
  std::vector<std::size_t> touched;
  const double avgdl = index.average_length();
  for (auto t : terms) {
    const auto list = index.postings(t);
    if (list.empty()) continue;
    const double idf = index.idf(t);
    for (const auto& p : list) {
      const double tf = p.tf;
      const double dl = index.doc_length(p.doc);
      const double norm = avgdl > 0.0 ? dl / avgdl : 0.0;
      if (scores[p.doc] == 0.0) touched.push_back(p.doc);
      scores[p.doc] += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
    }
  }
  std::vector<RankedCandidate> hits;
  hits.reserve(touched.size());
  for (auto d : touched) hits.push_back({d, scores[d]});
  const auto keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
  hits.resize(keep);
  return hits;
}

double bm25_score(const InvertedIndex& index, std::span<const TokenId> query, std::size_t doc,
                  const Bm25Params& params) {
  params.validate();
  if (doc >= index.num_docs()) throw IndexError("bm25_score: document " + std::to_string(doc) + " out of range");
  const std::set<TokenId> terms(query.begin(), query.end());
  double score = 0.0;
  for (auto t : terms) {
    for (const auto& p : index.postings(t)) {
      if (p.doc != doc) continue;
      const double tf = p.tf;
      const double norm = index.average_length() > 0.0 ? index.doc_length(doc) / index.average_length() : 0.0;
      score += index.idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
    }
  }
  return score;
}

MinedNegatives mine_bm25_negatives(const InvertedIndex& index, std::span<const TokenId> query,
                                   const std::unordered_set<std::size_t>& positives, std::size_t depth, std::size_t n,
                                   std::mt19937_64& rng, const Bm25Params& params) {
  if (depth < n) throw ConfigError("negatives.depth: must be at least the number of negatives");
  if (n == 0) return {};
  const auto ranked = bm25_search(index, query, depth, params);
  const auto pool = negative_pool(ranked, positives, depth, NegativeSource::bm25);
  return sample_negatives(pool, positives, n, index.num_docs(), rng);
}

}  // namespace qac
