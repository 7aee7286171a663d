// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/dense.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "qac/error.hpp"

namespace qac {

namespace {

static_assert(std::endian::native == std::endian::little, "embedding files are written in host order");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw LoadError(path + ": truncated embedding file");
  return value;
}

bool ranks_before(const RankedCandidate& a, const RankedCandidate& b) {
  return a.score > b.score || (a.score == b.score && a.ordinal < b.ordinal);
}

}  // namespace

void EmbeddingMatrix::validate() const {
  if (values.size() != ids.size() * dim) {
    throw DataError("embedding matrix holds " + std::to_string(values.size()) + " values for " +
                    std::to_string(ids.size()) + " rows of width " + std::to_string(dim));
  }
  for (std::size_t i = 0; i < rows(); ++i) {
    for (float v : row(i)) {
      if (!std::isfinite(v)) throw NumericError("non-finite embedding for " + ids[i]);
    }
  }
}

void EmbeddingMatrix::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  put<std::uint64_t>(out, rows());
  put<std::uint64_t>(out, dim);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  for (const auto& id : ids) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open embeddings " + path.string());
  const auto name = path.string();
  EmbeddingMatrix m;
  const auto count = get<std::uint64_t>(in, name);
  m.dim = get<std::uint64_t>(in, name);
  if (m.dim == 0 || count > (std::uint64_t{1} << 32) || m.dim > (std::uint64_t{1} << 20)) {
    throw LoadError(name + ": implausible embedding header");
  }
  m.values.resize(count * m.dim);
  if (!in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(m.values.size() * sizeof(float)))) {
    throw LoadError(name + ": truncated embedding file");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, name);
    std::string id(len, '\0');
    if (!in.read(id.data(), len)) throw LoadError(name + ": truncated embedding file");
    m.ids.push_back(std::move(id));
  }
  m.validate();
  return m;
}

TokenSequence model_input(const TokenSequence& tokens, const SpecialTokens& special, std::size_t max_seq_len) {
  TokenSequence out{special.cls};
  const auto n = std::min(tokens.size(), max_seq_len - 1);
  out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

template <typename T>
EmbeddingMatrix encode_sequences(const Model<T>& model, std::span<const TokenSequence> sequences,
                                 std::span<const std::string> ids, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("encode.batch_size: must be positive");
  if (ids.size() != sequences.size()) throw DimensionError("encode: one id per sequence required");
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  EmbeddingMatrix out;
  out.dim = cfg.hidden_dim;
  out.ids.assign(ids.begin(), ids.end());
  out.values.assign(sequences.size() * cfg.hidden_dim, 0.0f);

  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sequences[a].size() < sequences[b].size(); });
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const auto end = std::min(order.size(), begin + batch_size);
    std::vector<TokenSequence> batch;
    for (auto i = begin; i < end; ++i) batch.push_back(model_input(sequences[order[i]], cfg.special, cfg.max_seq_len));
    const auto emb = model.encode(TokenBatch::pack(batch, cfg.special.pad)).embedding();
    const auto data = emb.data();
    for (auto i = begin; i < end; ++i) {
      const auto src = data.subspan((i - begin) * cfg.hidden_dim, cfg.hidden_dim);
      for (float v : std::span<const T>(src)) {
        if (!std::isfinite(v)) throw NumericError("non-finite embedding for " + out.ids[order[i]]);
      }
      std::transform(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(order[i] * cfg.hidden_dim),
                     [](T v) { return static_cast<float>(v); });
    }
  }
  return out;
}

template <typename T>
EmbeddingMatrix encode_corpus(const Model<T>& model, const PassageStore& store, std::size_t batch_size) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(store.size());
  for (const auto& p : store.passages()) seqs.push_back(p.tokens);
  const auto ids = store.keys();
  return encode_sequences(model, seqs, ids, batch_size);
}

std::vector<std::vector<RankedCandidate>> dense_search_ordinals(const EmbeddingMatrix& corpus,
                                                                const EmbeddingMatrix& queries, std::size_t k) {
  if (k == 0) throw ConfigError("dense_search: k must be at least 1");
  if (corpus.dim != queries.dim) {
    throw DimensionError("dense_search: corpus width " + std::to_string(corpus.dim) + " vs query width " +
                         std::to_string(queries.dim));
  }
  const std::size_t n = corpus.rows();
  const std::size_t keep = std::min(k, n);
  std::vector<std::vector<RankedCandidate>> out(queries.rows());
  std::vector<RankedCandidate> scored(n);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto qv = queries.row(q);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pv = corpus.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < corpus.dim; ++j) s += double(qv[j]) * double(pv[j]);
      scored[i] = {i, s};
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), ranks_before);
    out[q].assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

RankedRun dense_search(const EmbeddingMatrix& corpus, const EmbeddingMatrix& queries, std::size_t k) {
  const auto hits = dense_search_ordinals(corpus, queries, k);
  RankedRun run;
  for (std::size_t q = 0; q < hits.size(); ++q) {
    std::vector<RunEntry> entries;
    entries.reserve(hits[q].size());
    for (const auto& h : hits[q]) entries.push_back({corpus.ids[h.ordinal], h.score});
    run.add(queries.ids[q], std::move(entries));
  }
  return run;
}

MinedNegatives mine_dense_negatives(std::span<const RankedCandidate> ranked,
                                    const std::unordered_set<std::size_t>& positives, std::size_t depth,
                                    std::size_t n, std::size_t corpus_size, std::mt19937_64& rng) {
  if (depth < n) throw ConfigError("negatives.depth: must be at least the number of negatives");
  const auto pool = negative_pool(ranked, positives, depth, NegativeSource::dense);
  return sample_negatives(pool, positives, n, corpus_size, rng);
}

#define QAC_INSTANTIATE_DENSE(T)                                                                                   \
  template EmbeddingMatrix encode_sequences<T>(const Model<T>&, std::span<const TokenSequence>,                    \
                                               std::span<const std::string>, std::size_t);                         \
  template EmbeddingMatrix encode_corpus<T>(const Model<T>&, const PassageStore&, std::size_t);

QAC_INSTANTIATE_DENSE(float)
QAC_INSTANTIATE_DENSE(double)

#undef QAC_INSTANTIATE_DENSE

}  // namespace qac
