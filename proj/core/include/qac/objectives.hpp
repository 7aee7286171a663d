// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "qac/model.hpp"
#include "qac/tensor.hpp"

namespace qac {

/// How positions are chosen and corrupted for masked language modelling.
struct MaskingSpec {
  double mask_rate = 0.15;
  double replace_with_mask = 0.8;
  double replace_with_random = 0.1;
  double keep = 0.1;
  std::uint64_t seed = 42;

  /// Throws ConfigError for a rate outside [0,1] or a split that does not sum to 1.
  void validate() const;
};

struct MaskedSequence {
  TokenSequence tokens;                // corrupted input
  std::vector<std::size_t> positions;  // mask_pos, ascending
  std::vector<TokenId> targets;        // original ids at positions
};

struct MaskedBatch {
  std::vector<MaskedSequence> sequences;

  std::size_t mask_count() const;
  TokenBatch pack(TokenId pad) const;
  /// Row indices (b * seq_len + pos) of every masked position, in batch order.
  std::vector<std::size_t> rows(std::size_t seq_len) const;
  std::vector<TokenId> targets() const;
};

/// Selects each non-special position independently with probability
/// spec.mask_rate and applies the [MASK]/random/keep split to it.
MaskedSequence apply_masking(const TokenSequence& tokens, const MaskingSpec& spec, const SpecialTokens& special,
                             std::size_t vocab_size, std::mt19937_64& rng);
/// Same, with a generator seeded from spec.seed.
MaskedSequence apply_masking(const TokenSequence& tokens, const MaskingSpec& spec, const SpecialTokens& special,
                             std::size_t vocab_size);
MaskedBatch mask_batch(std::span<const TokenSequence> sequences, const MaskingSpec& spec, const SpecialTokens& special,
                       std::size_t vocab_size, std::mt19937_64& rng);

/// Cross-entropy averaged over the batch's mask positions. logits are
/// [batch * seq_len, vocab] for the packed batch. With no mask positions the
/// loss is defined as zero and a warning is logged.
template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& logits, const MaskedBatch& batch, std::size_t seq_len);

/// mlm_loss that projects only the masked rows of hidden [batch * seq_len, d]
/// to the vocabulary. Numerically identical, far cheaper for large vocabularies.
template <typename T>
Tensor<T> mlm_loss_from_hidden(const Model<T>& model, const Tensor<T>& hidden, const MaskedBatch& batch,
                               std::size_t seq_len);

/// In-batch contrastive loss: anchor i's positive is context i; every context
/// row in the batch sits in the denominator. pair_ids, when given, must be
/// distinct (a repeated id would put a positive among the negatives).
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& anchors, const Tensor<T>& contexts, double temperature,
                           std::span<const std::uint64_t> pair_ids = {});

/// Mean over queries of -log softmax(q . p / tau) at each query's positive column.
template <typename T>
Tensor<T> infonce_loss(const Tensor<T>& queries, const Tensor<T>& passages, std::span<const std::size_t> positive_index,
                       double temperature = 1.0);

/// Single-query fine-tuning loss with tau = 1: query [1,d] or [d], positive
/// likewise, negatives [n,d] with n >= 1.
template <typename T>
Tensor<T> finetune_infonce(const Tensor<T>& query, const Tensor<T>& positive, const Tensor<T>& negatives);

template <typename T>
struct CoCondenserLoss {
  Tensor<T> total;
  Tensor<T> mlm;
  Tensor<T> mlm_aux;
  Tensor<T> contrastive;
};

template <typename T>
struct CotMaeLoss {
  Tensor<T> total;
  Tensor<T> mlm;
  Tensor<T> ctx_mlm;
};

/// L_mlm + L_mlm^aux + L_co over masked pairs. Both sides are encoded; MLM and
/// the Condenser-head MLM are averaged over the mask positions of both sides.
template <typename T>
CoCondenserLoss<T> cocondenser_total_loss(const Model<T>& model, const MaskedBatch& x, const MaskedBatch& y,
                                          double temperature, std::span<const std::uint64_t> pair_ids = {});

/// L_mlm (encoder over masked x) + L_ctx_mlm (decoder over masked y
/// conditioned on h_x).
template <typename T>
CotMaeLoss<T> cotmae_total_loss(const Model<T>& model, const MaskedBatch& x, const MaskedBatch& y);

}  // namespace qac
