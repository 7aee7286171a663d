// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/objectives.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "qac/error.hpp"

namespace qac {

void MaskingSpec::validate() const {
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) {
    throw ConfigError("masking.mask_rate: " + std::to_string(mask_rate) + " is outside [0,1]");
  }
  for (double p : {replace_with_mask, replace_with_random, keep}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("masking: action probabilities must lie in [0,1]");
  }
  if (std::abs(replace_with_mask + replace_with_random + keep - 1.0) > 1e-9) {
    throw ConfigError("masking: action split must sum to 1");
  }
}

std::size_t MaskedBatch::mask_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.positions.size();
  return n;
}

TokenBatch MaskedBatch::pack(TokenId pad) const {
  std::vector<TokenSequence> tokens;
  tokens.reserve(sequences.size());
  for (const auto& s : sequences) tokens.push_back(s.tokens);
  return TokenBatch::pack(tokens, pad);
}

std::vector<std::size_t> MaskedBatch::rows(std::size_t seq_len) const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (auto p : sequences[b].positions) out.push_back(b * seq_len + p);
  }
  return out;
}

std::vector<TokenId> MaskedBatch::targets() const {
  std::vector<TokenId> out;
  for (const auto& s : sequences) out.insert(out.end(), s.targets.begin(), s.targets.end());
  return out;
}

MaskedSequence apply_masking(const TokenSequence& tokens, const MaskingSpec& spec, const SpecialTokens& special,
                             std::size_t vocab_size, std::mt19937_64& rng) {
  spec.validate();
  if (tokens.empty() || tokens.front() != special.cls) {
    throw ContractError("apply_masking: sequence must begin with [CLS]");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_token(special.first_regular, static_cast<TokenId>(vocab_size) - 1);
  MaskedSequence out;
  out.tokens = tokens;
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    if (special.is_special(tokens[p]) && tokens[p] != special.unk) continue;
    if (unit(rng) >= spec.mask_rate) continue;
    out.positions.push_back(p);
    out.targets.push_back(tokens[p]);
    const double action = unit(rng);
    if (action < spec.replace_with_mask) {
      out.tokens[p] = special.mask;
    } else if (action < spec.replace_with_mask + spec.replace_with_random) {
      out.tokens[p] = random_token(rng);
    }
  }
  return out;
}

MaskedSequence apply_masking(const TokenSequence& tokens, const MaskingSpec& spec, const SpecialTokens& special,
                             std::size_t vocab_size) {
  std::mt19937_64 rng(spec.seed);
  return apply_masking(tokens, spec, special, vocab_size, rng);
}

MaskedBatch mask_batch(std::span<const TokenSequence> sequences, const MaskingSpec& spec, const SpecialTokens& special,
                       std::size_t vocab_size, std::mt19937_64& rng) {
  MaskedBatch out;
  out.sequences.reserve(sequences.size());
  for (const auto& s : sequences) out.sequences.push_back(apply_masking(s, spec, special, vocab_size, rng));
  return out;
}

template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& logits, const MaskedBatch& batch, std::size_t seq_len) {
  if (logits.dim() != 2 || logits.rows() != batch.sequences.size() * seq_len) {
    throw DimensionError("mlm_loss: logits " + shape_string(logits.shape()) + " do not cover " +
                         std::to_string(batch.sequences.size()) + " x " + std::to_string(seq_len) + " positions");
  }
  if (batch.mask_count() == 0) {
    spdlog::warn("mlm_loss: batch has no mask positions; loss defined as 0");
    return Tensor<T>::scalar(T(0));
  }
  const auto rows = batch.rows(seq_len);
  const auto targets = batch.targets();
  return cross_entropy(logits, targets, rows);
}

template <typename T>
Tensor<T> mlm_loss_from_hidden(const Model<T>& model, const Tensor<T>& hidden, const MaskedBatch& batch,
                               std::size_t seq_len) {
  if (hidden.dim() != 2 || hidden.rows() != batch.sequences.size() * seq_len) {
    throw DimensionError("mlm_loss: hidden " + shape_string(hidden.shape()) + " does not cover " +
                         std::to_string(batch.sequences.size()) + " x " + std::to_string(seq_len) + " positions");
  }
  if (batch.mask_count() == 0) {
    spdlog::warn("mlm_loss: batch has no mask positions; loss defined as 0");
    return Tensor<T>::scalar(T(0));
  }
  const auto rows = batch.rows(seq_len);
  std::vector<std::int32_t> ids(rows.begin(), rows.end());
  std::vector<std::size_t> positions(rows.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  const auto logits = model.mlm_logits(gather_rows(hidden, ids));
  return cross_entropy(logits, batch.targets(), positions);
}

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& anchors, const Tensor<T>& contexts, double temperature,
                           std::span<const std::uint64_t> pair_ids) {
  if (anchors.dim() != 2 || anchors.shape() != contexts.shape()) {
    throw DimensionError("contrastive_loss: anchors " + shape_string(anchors.shape()) + " vs contexts " +
                         shape_string(contexts.shape()));
  }
  const std::size_t batch = anchors.rows();
  if (batch < 2) throw ContractError("contrastive_loss: needs at least 2 pairs per batch");
  if (!(temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be positive");
  if (!pair_ids.empty()) {
    if (pair_ids.size() != batch) throw DimensionError("contrastive_loss: pair id count does not match batch");
    std::unordered_set<std::uint64_t> seen;
    for (auto id : pair_ids) {
      if (!seen.insert(id).second) {
        throw ContractError("contrastive_loss: pair id " + std::to_string(id) + " appears twice in one batch");
      }
    }
  }
  std::vector<std::size_t> diag(batch);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return infonce_loss(anchors, contexts, diag, temperature);
}

template <typename T>
Tensor<T> infonce_loss(const Tensor<T>& queries, const Tensor<T>& passages, std::span<const std::size_t> positive_index,
                       double temperature) {
  if (queries.dim() != 2 || passages.dim() != 2 || queries.cols() != passages.cols()) {
    throw DimensionError("infonce_loss: queries " + shape_string(queries.shape()) + " vs passages " +
                         shape_string(passages.shape()));
  }
  if (positive_index.size() != queries.rows()) {
    throw DimensionError("infonce_loss: " + std::to_string(positive_index.size()) + " positives for " +
                         std::to_string(queries.rows()) + " queries");
  }
  if (passages.rows() < 2) throw ContractError("infonce_loss: needs at least one negative");
  auto sims = matmul_nt(queries, passages);
  if (temperature != 1.0) sims = scale(sims, static_cast<T>(1.0 / temperature));
  std::vector<TokenId> targets(positive_index.size());
  std::vector<std::size_t> rows(positive_index.size());
  for (std::size_t i = 0; i < positive_index.size(); ++i) {
    if (positive_index[i] >= passages.rows()) {
      throw IndexError("infonce_loss: positive column " + std::to_string(positive_index[i]) + " outside " +
                       std::to_string(passages.rows()) + " passages");
    }
    targets[i] = static_cast<TokenId>(positive_index[i]);
    rows[i] = i;
  }
  return cross_entropy(sims, targets, rows);
}

template <typename T>
Tensor<T> finetune_infonce(const Tensor<T>& query, const Tensor<T>& positive, const Tensor<T>& negatives) {
  auto as_row = [](const Tensor<T>& t, const char* what) {
    if (t.dim() == 1) return Tensor<T>(Shape{1, t.size(0)}, std::vector<T>(t.data().begin(), t.data().end()), false);
    if (t.dim() == 2 && t.rows() == 1) return t;
    throw DimensionError(std::string("finetune_infonce: ") + what + " must be a single vector, got " +
                         shape_string(t.shape()));
  };
  if (query.dim() == 1 || positive.dim() == 1) {
    if (query.requires_grad() || positive.requires_grad()) {
      throw ContractError("finetune_infonce: pass [1,d] tensors when gradients are required");
    }
  }
  const auto q = as_row(query, "query");
  const auto p = as_row(positive, "positive");
  if (negatives.dim() != 2 || negatives.rows() == 0) {
    throw ContractError("finetune_infonce: at least one negative passage is required");
  }
  if (negatives.cols() != p.cols() || q.cols() != p.cols()) {
    throw DimensionError("finetune_infonce: embedding widths disagree");
  }
  // Candidate matrix rows: positive first, then negatives.
  std::vector<std::uint8_t> take_first(negatives.rows() + 1, 0);
  take_first[0] = 1;
  std::vector<std::int32_t> pos_rows(negatives.rows() + 1, 0);
  std::vector<std::int32_t> neg_rows(negatives.rows() + 1, 0);
  for (std::size_t i = 1; i <= negatives.rows(); ++i) neg_rows[i] = static_cast<std::int32_t>(i - 1);
  const auto candidates = where_rows(take_first, gather_rows(p, pos_rows), gather_rows(negatives, neg_rows));
  const std::size_t positive_column = 0;
  return infonce_loss(q, candidates, std::span<const std::size_t>(&positive_column, 1), 1.0);
}

namespace {

template <typename T>
Tensor<T> weighted_mean(const Tensor<T>& a, std::size_t na, const Tensor<T>& b, std::size_t nb) {
  const std::size_t n = na + nb;
  if (n == 0) return Tensor<T>::scalar(T(0));
  if (nb == 0) return a;
  if (na == 0) return b;
  return add(scale(a, static_cast<T>(double(na) / double(n))), scale(b, static_cast<T>(double(nb) / double(n))));
}

}  // namespace

template <typename T>
CoCondenserLoss<T> cocondenser_total_loss(const Model<T>& model, const MaskedBatch& x, const MaskedBatch& y,
                                          double temperature, std::span<const std::uint64_t> pair_ids) {
  if (x.sequences.size() != y.sequences.size()) {
    throw DimensionError("cocondenser_total_loss: " + std::to_string(x.sequences.size()) + " passages vs " +
                         std::to_string(y.sequences.size()) + " contexts");
  }
  const auto pad = model.config().special.pad;
  const auto xb = x.pack(pad);
  const auto yb = y.pack(pad);
  const auto hx = model.encode(xb);
  const auto hy = model.encode(yb);
  const auto& L = model.config().encoder_layers;

  CoCondenserLoss<T> out;
  const std::size_t nx = x.mask_count(), ny = y.mask_count();
  out.mlm = weighted_mean(mlm_loss_from_hidden(model, hx.layers[L], x, xb.seq), nx,
                          mlm_loss_from_hidden(model, hy.layers[L], y, yb.seq), ny);
  out.mlm_aux = weighted_mean(mlm_loss_from_hidden(model, model.condenser_head_hidden(hx), x, xb.seq), nx,
                              mlm_loss_from_hidden(model, model.condenser_head_hidden(hy), y, yb.seq), ny);
  out.contrastive = contrastive_loss(hx.embedding(), hy.embedding(), temperature, pair_ids);
  out.total = add(add(out.mlm, out.mlm_aux), out.contrastive);
  return out;
}

template <typename T>
CotMaeLoss<T> cotmae_total_loss(const Model<T>& model, const MaskedBatch& x, const MaskedBatch& y) {
  if (x.sequences.size() != y.sequences.size()) {
    throw DimensionError("cotmae_total_loss: " + std::to_string(x.sequences.size()) + " passages vs " +
                         std::to_string(y.sequences.size()) + " contexts");
  }
  const auto pad = model.config().special.pad;
  const auto xb = x.pack(pad);
  const auto yb = y.pack(pad);
  const auto hx = model.encode(xb);
  CotMaeLoss<T> out;
  out.mlm = mlm_loss_from_hidden(model, hx.layers[model.config().encoder_layers], x, xb.seq);
  if (y.mask_count() == 0) {
    out.ctx_mlm = Tensor<T>::scalar(T(0));
  } else {
    const auto decoded = model.cotmae_decoder_hidden(hx.embedding(), yb);
    out.ctx_mlm = mlm_loss_from_hidden(model, decoded, y, yb.seq);
  }
  out.total = add(out.mlm, out.ctx_mlm);
  return out;
}

#define QAC_INSTANTIATE_OBJECTIVES(T)                                                                               \
  template Tensor<T> mlm_loss<T>(const Tensor<T>&, const MaskedBatch&, std::size_t);                                \
  template Tensor<T> mlm_loss_from_hidden<T>(const Model<T>&, const Tensor<T>&, const MaskedBatch&, std::size_t);   \
  template Tensor<T> contrastive_loss<T>(const Tensor<T>&, const Tensor<T>&, double, std::span<const std::uint64_t>); \
  template Tensor<T> infonce_loss<T>(const Tensor<T>&, const Tensor<T>&, std::span<const std::size_t>, double);     \
  template Tensor<T> finetune_infonce<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template CoCondenserLoss<T> cocondenser_total_loss<T>(const Model<T>&, const MaskedBatch&, const MaskedBatch&,    \
                                                        double, std::span<const std::uint64_t>);                    \
  template CotMaeLoss<T> cotmae_total_loss<T>(const Model<T>&, const MaskedBatch&, const MaskedBatch&);

QAC_INSTANTIATE_OBJECTIVES(float)
QAC_INSTANTIATE_OBJECTIVES(double)

#undef QAC_INSTANTIATE_OBJECTIVES

}  // namespace qac
