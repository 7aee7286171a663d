// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/negatives.hpp"

#include <string>

#include "qac/error.hpp"

namespace qac {

std::string_view to_string(NegativeSource source) {
  switch (source) {
    case NegativeSource::bm25: return "bm25";
    case NegativeSource::dense: return "dense";
    case NegativeSource::random: return "random";
  }
  return "unknown";
}

std::vector<std::size_t> MinedNegatives::ordinals() const {
  std::vector<std::size_t> out;
  out.reserve(negatives.size());
  for (const auto& n : negatives) out.push_back(n.ordinal);
  return out;
}

std::vector<NegativeCandidate> negative_pool(std::span<const RankedCandidate> ranked,
                                             const std::unordered_set<std::size_t>& positives, std::size_t depth,
                                             NegativeSource source) {
  std::vector<NegativeCandidate> out;
  for (std::size_t r = 0; r < ranked.size() && r < depth; ++r) {
    if (positives.contains(ranked[r].ordinal)) continue;
    out.push_back({ranked[r].ordinal, r + 1, ranked[r].score, source});
  }
  return out;
}

MinedNegatives sample_negatives(std::span<const NegativeCandidate> pool,
                                const std::unordered_set<std::size_t>& positives, std::size_t n,
                                std::size_t corpus_size, std::mt19937_64& rng) {
  MinedNegatives out;
  std::vector<NegativeCandidate> items(pool.begin(), pool.end());
  // Partial Fisher-Yates: the first min(n, |pool|) slots become the sample.
  const std::size_t take = std::min(n, items.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, items.size() - 1)(rng);
    std::swap(items[i], items[j]);
    out.negatives.push_back(items[i]);
  }
  if (out.negatives.size() == n) return out;

  std::unordered_set<std::size_t> taken;
  for (const auto& c : out.negatives) taken.insert(c.ordinal);
  std::size_t available = 0;
  for (std::size_t o = 0; o < corpus_size; ++o) {
    if (!positives.contains(o) && !taken.contains(o)) ++available;
  }
  if (available < n - out.negatives.size()) {
    throw DataError("corpus of " + std::to_string(corpus_size) + " passages cannot supply " + std::to_string(n) +
                    " negatives");
  }
  out.padded = true;
  std::uniform_int_distribution<std::size_t> any(0, corpus_size - 1);
  while (out.negatives.size() < n) {
    const auto o = any(rng);
    if (positives.contains(o) || !taken.insert(o).second) continue;
    out.negatives.push_back({o, 0, 0.0, NegativeSource::random});
  }
  return out;
}

}  // namespace qac
