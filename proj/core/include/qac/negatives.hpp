// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace qac {

enum class NegativeSource { bm25, dense, random };

std::string_view to_string(NegativeSource source);

/// A retrieved passage with the rank (1-based) and score it was retrieved at.
struct RankedCandidate {
  std::size_t ordinal = 0;
  double score = 0.0;
};

struct NegativeCandidate {
  std::size_t ordinal = 0;
  std::size_t rank = 0;  // 0 for random padding
  double score = 0.0;
  NegativeSource source = NegativeSource::random;
};

struct MinedNegatives {
  std::vector<NegativeCandidate> negatives;
  /// Set when the retrieved pool was too small and random passages filled it.
  bool padded = false;

  std::vector<std::size_t> ordinals() const;
};

/// The top-`depth` entries of a ranked list minus positives, with provenance.
std::vector<NegativeCandidate> negative_pool(std::span<const RankedCandidate> ranked,
                                             const std::unordered_set<std::size_t>& positives, std::size_t depth,
                                             NegativeSource source);

/// Uniform sample of n without replacement from pool; if the pool holds fewer
/// than n, random non-positive passages of the corpus fill the rest and the
/// result is flagged padded.
MinedNegatives sample_negatives(std::span<const NegativeCandidate> pool,
                                const std::unordered_set<std::size_t>& positives, std::size_t n,
                                std::size_t corpus_size, std::mt19937_64& rng);

}  // namespace qac
