// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qac/tensor.hpp"

namespace qac {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Reserved ids at the bottom of every vocabulary.
struct SpecialTokens {
  TokenId pad = 0;
  TokenId unk = 1;
  TokenId cls = 2;
  TokenId sep = 3;
  TokenId mask = 4;
  /// First id that is an ordinary word.
  TokenId first_regular = 5;

  bool is_special(TokenId id) const { return id >= 0 && id < first_regular; }
  bool operator==(const SpecialTokens&) const = default;
};

/// Architecture hyperparameters shared by the encoder and both auxiliary heads.
struct ModelConfig {
  std::size_t vocab_size = 2048;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t encoder_layers = 6;  // L
  std::size_t tap_layer = 3;       // M, the encoder layer the Condenser head reads tokens from
  std::size_t decoder_layers = 2;  // N, depth of either auxiliary head
  std::size_t ffn_dim = 256;
  std::size_t max_seq_len = 160;
  bool tie_weights = true;
  SpecialTokens special;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Which auxiliary heads a model carries next to its encoder.
struct ModelParts {
  bool condenser_head = false;
  bool cotmae_decoder = false;
  bool operator==(const ModelParts&) const = default;
};

/// A right-padded batch of token sequences laid out as [batch * seq] rows.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> key_mask;  // 1 for real tokens

  static TokenBatch pack(std::span<const TokenSequence> sequences, TokenId pad);
  std::size_t row(std::size_t b, std::size_t pos) const { return b * seq + pos; }
  std::size_t length(std::size_t b) const;
  /// 1 for the row at position 0 of every sequence.
  std::vector<std::uint8_t> first_position_mask() const;
  /// Row indices of position 0 of every sequence.
  std::vector<std::int32_t> first_rows() const;
};

/// Activations of the embedding output and every encoder block.
template <typename T>
struct HiddenStates {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> key_mask;  // copied from the encoded batch
  std::vector<Tensor<T>> layers;       // L + 1 tensors of shape [batch * seq, d]

  /// Rows at position 0 of the given layer, shape [batch, d].
  Tensor<T> cls(std::size_t layer) const;
  /// The passage embedding h_0^L.
  Tensor<T> embedding() const { return cls(layers.size() - 1); }
};

template <typename T>
struct TransformerLayer {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> w_in, b_in, w_out, b_out;
  Tensor<T> ln2_gamma, ln2_beta;

  /// Post-LN block: LN(x + MHA(x)) then LN(h + FFN(h)).
  Tensor<T> forward(const Tensor<T>& x, const TokenBatch& batch, std::size_t heads) const;
  void for_each(const std::string& prefix, const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// BERT-style encoder plus optional Condenser head and CoT-MAE decoder.
///
/// Token embeddings, position embeddings and the MLM projection are shared by
/// all three stacks. Parameters are handles: the model owns them but callers
/// (optimizers, checkpoints) mutate their storage in place.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, ModelParts parts, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelParts parts() const { return parts_; }

  Tensor<T> embed(const TokenBatch& batch) const;
  HiddenStates<T> encode(const TokenBatch& batch) const;

  /// Vocabulary logits for hidden rows [R, d] -> [R, vocab].
  Tensor<T> mlm_logits(const Tensor<T>& hidden) const;

  /// Final hidden states of the Condenser head over [h_0^L, h_1^M, ..., h_n^M].
  Tensor<T> condenser_head_hidden(const HiddenStates<T>& states) const;
  Tensor<T> condenser_head_forward(const HiddenStates<T>& states) const;

  /// Final hidden states of the CoT-MAE decoder over {h_x, y_1, ..., y_n}.
  /// masked_y holds a placeholder (normally [CLS]) at position 0 that the
  /// context embedding replaces.
  Tensor<T> cotmae_decoder_hidden(const Tensor<T>& context, const TokenBatch& masked_y) const;
  Tensor<T> cotmae_decoder_forward(const Tensor<T>& context, const TokenBatch& masked_y) const;

  std::vector<NamedParameter<T>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Freezes (false) or unfreezes the auxiliary heads' own parameters.
  void set_heads_trainable(bool trainable);

  /// Deep copy of every parameter.
  Model clone() const;
  /// Deep copy without auxiliary heads.
  Model encoder_only() const;
  /// Deep copy with the given head set; heads missing here are freshly initialised.
  Model with_parts(ModelParts parts, std::uint64_t seed) const;

 private:
  void for_each_parameter(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  Tensor<T> run_stack(const std::vector<TransformerLayer<T>>& stack, Tensor<T> x, const TokenBatch& batch) const;

  ModelConfig config_;
  ModelParts parts_;
  Tensor<T> token_embedding_;
  Tensor<T> position_embedding_;
  Tensor<T> embedding_ln_gamma_, embedding_ln_beta_;
  std::vector<TransformerLayer<T>> encoder_;
  Tensor<T> mlm_weight_;  // only when weights are untied
  Tensor<T> mlm_bias_;
  std::vector<TransformerLayer<T>> condenser_head_;
  std::vector<TransformerLayer<T>> cotmae_decoder_;
};

}  // namespace qac
