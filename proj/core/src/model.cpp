// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/model.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "qac/error.hpp"

namespace qac {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("model." + field + ": " + why); };
  if (hidden_dim == 0) fail("hidden_dim", "must be positive");
  if (num_heads == 0) fail("num_heads", "must be positive");
  if (hidden_dim % num_heads != 0) fail("num_heads", "hidden_dim must be divisible by num_heads");
  if (encoder_layers < 2) fail("encoder_layers", "must be at least 2 so that 1 <= tap_layer < encoder_layers");
  if (tap_layer < 1 || tap_layer >= encoder_layers) fail("tap_layer", "must satisfy 1 <= tap_layer < encoder_layers");
  if (decoder_layers < 1) fail("decoder_layers", "must be at least 1");
  if (ffn_dim == 0) fail("ffn_dim", "must be positive");
  if (max_seq_len < 145) fail("max_seq_len", "must be at least 145 (144 passage tokens plus [CLS])");
  if (vocab_size <= static_cast<std::size_t>(special.first_regular)) {
    fail("vocab_size", "must exceed the number of special tokens");
  }
}

TokenBatch TokenBatch::pack(std::span<const TokenSequence> sequences, TokenId pad) {
  if (sequences.empty()) throw ContractError("TokenBatch::pack: empty batch");
  TokenBatch out;
  out.batch = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw ContractError("TokenBatch::pack: empty sequence");
    out.seq = std::max(out.seq, s.size());
  }
  out.ids.assign(out.batch * out.seq, pad);
  out.key_mask.assign(out.batch * out.seq, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    std::copy(sequences[b].begin(), sequences[b].end(), out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.seq));
    std::fill_n(out.key_mask.begin() + static_cast<std::ptrdiff_t>(b * out.seq), sequences[b].size(), 1);
  }
  return out;
}

std::size_t TokenBatch::length(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < seq; ++p) n += key_mask[b * seq + p];
  return n;
}

std::vector<std::uint8_t> TokenBatch::first_position_mask() const {
  std::vector<std::uint8_t> m(batch * seq, 0);
  for (std::size_t b = 0; b < batch; ++b) m[b * seq] = 1;
  return m;
}

std::vector<std::int32_t> TokenBatch::first_rows() const {
  std::vector<std::int32_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = static_cast<std::int32_t>(b * seq);
  return rows;
}

template <typename T>
Tensor<T> HiddenStates<T>::cls(std::size_t layer) const {
  if (layer >= layers.size()) {
    throw IndexError("HiddenStates::cls: layer " + std::to_string(layer) + " of " + std::to_string(layers.size()));
  }
  std::vector<std::int32_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = static_cast<std::int32_t>(b * seq);
  return gather_rows(layers[layer], rows);
}

namespace {

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    double x;
    do {
      x = normal(rng);
    } while (std::abs(x) > 2.0 * stddev);
    v = static_cast<T>(x);
  }
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
TransformerLayer<T> make_layer(std::size_t d, std::size_t ffn, std::mt19937_64& rng) {
  constexpr double kStd = 0.02;
  TransformerLayer<T> l;
  l.wq = truncated_normal<T>({d, d}, kStd, rng);
  l.bq = Tensor<T>::zeros({d}, true);
  l.wk = truncated_normal<T>({d, d}, kStd, rng);
  l.bk = Tensor<T>::zeros({d}, true);
  l.wv = truncated_normal<T>({d, d}, kStd, rng);
  l.bv = Tensor<T>::zeros({d}, true);
  l.wo = truncated_normal<T>({d, d}, kStd, rng);
  l.bo = Tensor<T>::zeros({d}, true);
  l.ln1_gamma = Tensor<T>::full({d}, T(1), true);
  l.ln1_beta = Tensor<T>::zeros({d}, true);
  l.w_in = truncated_normal<T>({d, ffn}, kStd, rng);
  l.b_in = Tensor<T>::zeros({ffn}, true);
  l.w_out = truncated_normal<T>({ffn, d}, kStd, rng);
  l.b_out = Tensor<T>::zeros({d}, true);
  l.ln2_gamma = Tensor<T>::full({d}, T(1), true);
  l.ln2_beta = Tensor<T>::zeros({d}, true);
  return l;
}

constexpr double kLayerNormEps = 1e-12;

}  // namespace

template <typename T>
Tensor<T> TransformerLayer<T>::forward(const Tensor<T>& x, const TokenBatch& batch, std::size_t heads) const {
  const auto q = add_bias(matmul(x, wq), bq);
  const auto k = add_bias(matmul(x, wk), bk);
  const auto v = add_bias(matmul(x, wv), bv);
  const auto ctx = attention(q, k, v, batch.batch, batch.seq, heads, batch.key_mask);
  const auto attn_out = add_bias(matmul(ctx, wo), bo);
  const auto h = layer_norm(add(x, attn_out), ln1_gamma, ln1_beta, T(kLayerNormEps));
  const auto f = add_bias(matmul(gelu(add_bias(matmul(h, w_in), b_in)), w_out), b_out);
  return layer_norm(add(h, f), ln2_gamma, ln2_beta, T(kLayerNormEps));
}

template <typename T>
void TransformerLayer<T>::for_each(const std::string& prefix,
                                   const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + "attn.wq", wq);
  fn(prefix + "attn.bq", bq);
  fn(prefix + "attn.wk", wk);
  fn(prefix + "attn.bk", bk);
  fn(prefix + "attn.wv", wv);
  fn(prefix + "attn.bv", bv);
  fn(prefix + "attn.wo", wo);
  fn(prefix + "attn.bo", bo);
  fn(prefix + "ln1.gamma", ln1_gamma);
  fn(prefix + "ln1.beta", ln1_beta);
  fn(prefix + "ffn.w_in", w_in);
  fn(prefix + "ffn.b_in", b_in);
  fn(prefix + "ffn.w_out", w_out);
  fn(prefix + "ffn.b_out", b_out);
  fn(prefix + "ln2.gamma", ln2_gamma);
  fn(prefix + "ln2.beta", ln2_beta);
}

template <typename T>
Model<T>::Model(const ModelConfig& config, ModelParts parts, std::uint64_t seed) : config_(config), parts_(parts) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.hidden_dim;
  token_embedding_ = truncated_normal<T>({config_.vocab_size, d}, 0.02, rng);
  position_embedding_ = truncated_normal<T>({config_.max_seq_len, d}, 0.02, rng);
  embedding_ln_gamma_ = Tensor<T>::full({d}, T(1), true);
  embedding_ln_beta_ = Tensor<T>::zeros({d}, true);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) encoder_.push_back(make_layer<T>(d, config_.ffn_dim, rng));
  if (!config_.tie_weights) mlm_weight_ = truncated_normal<T>({config_.vocab_size, d}, 0.02, rng);
  mlm_bias_ = Tensor<T>::zeros({config_.vocab_size}, true);
  if (parts_.condenser_head) {
    for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
      condenser_head_.push_back(make_layer<T>(d, config_.ffn_dim, rng));
    }
  }
  if (parts_.cotmae_decoder) {
    for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
      cotmae_decoder_.push_back(make_layer<T>(d, config_.ffn_dim, rng));
    }
  }
}

template <typename T>
Tensor<T> Model<T>::embed(const TokenBatch& batch) const {
  if (batch.seq > config_.max_seq_len) {
    throw LengthError("encode: sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  if (batch.ids.size() != batch.batch * batch.seq || batch.key_mask.size() != batch.ids.size()) {
    throw ContractError("encode: malformed token batch");
  }
  for (auto id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw IndexError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  std::vector<std::int32_t> positions(batch.ids.size());
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = static_cast<std::int32_t>(r % batch.seq);
  const auto tokens = gather_rows(token_embedding_, batch.ids);
  const auto pos = gather_rows(position_embedding_, positions);
  return layer_norm(add(tokens, pos), embedding_ln_gamma_, embedding_ln_beta_, T(kLayerNormEps));
}

template <typename T>
Tensor<T> Model<T>::run_stack(const std::vector<TransformerLayer<T>>& stack, Tensor<T> x,
                              const TokenBatch& batch) const {
  for (const auto& layer : stack) x = layer.forward(x, batch, config_.num_heads);
  return x;
}

template <typename T>
HiddenStates<T> Model<T>::encode(const TokenBatch& batch) const {
  for (std::size_t b = 0; b < batch.batch; ++b) {
    if (batch.ids[b * batch.seq] != config_.special.cls) {
      throw ContractError("encode: sequence " + std::to_string(b) + " does not start with [CLS]");
    }
  }
  HiddenStates<T> out;
  out.batch = batch.batch;
  out.seq = batch.seq;
  out.key_mask = batch.key_mask;
  out.layers.reserve(encoder_.size() + 1);
  out.layers.push_back(embed(batch));
  for (const auto& layer : encoder_) out.layers.push_back(layer.forward(out.layers.back(), batch, config_.num_heads));
  return out;
}

template <typename T>
Tensor<T> Model<T>::mlm_logits(const Tensor<T>& hidden) const {
  const auto& weight = config_.tie_weights ? token_embedding_ : mlm_weight_;
  return add_bias(matmul_nt(hidden, weight), mlm_bias_);
}

template <typename T>
Tensor<T> Model<T>::condenser_head_hidden(const HiddenStates<T>& states) const {
  if (!parts_.condenser_head) throw ContractError("condenser_head_forward: model has no Condenser head");
  if (states.layers.size() != config_.encoder_layers + 1) {
    throw ContractError("condenser_head_forward: expected " + std::to_string(config_.encoder_layers + 1) +
                        " hidden layers, got " + std::to_string(states.layers.size()));
  }
  const auto& last = states.layers[config_.encoder_layers];
  const auto& tap = states.layers[config_.tap_layer];
  if (last.shape() != tap.shape() || last.rows() != states.batch * states.seq) {
    throw ContractError("condenser_head_forward: layer shapes disagree " + shape_string(last.shape()) + " vs " +
                        shape_string(tap.shape()));
  }
  if (states.key_mask.size() != last.rows()) throw ContractError("condenser_head_forward: missing padding mask");
  TokenBatch layout;
  layout.batch = states.batch;
  layout.seq = states.seq;
  layout.key_mask = states.key_mask;
  const auto input = where_rows(layout.first_position_mask(), last, tap);
  return run_stack(condenser_head_, input, layout);
}

template <typename T>
Tensor<T> Model<T>::condenser_head_forward(const HiddenStates<T>& states) const {
  return mlm_logits(condenser_head_hidden(states));
}

template <typename T>
Tensor<T> Model<T>::cotmae_decoder_hidden(const Tensor<T>& context, const TokenBatch& masked_y) const {
  if (!parts_.cotmae_decoder) throw ContractError("cotmae_decoder_forward: model has no CoT-MAE decoder");
  if (context.dim() != 2 || context.cols() != config_.hidden_dim) {
    throw DimensionError("cotmae_decoder_forward: context embedding " + shape_string(context.shape()) +
                         " does not have width " + std::to_string(config_.hidden_dim));
  }
  if (context.rows() != masked_y.batch) {
    throw DimensionError("cotmae_decoder_forward: " + std::to_string(context.rows()) + " context embeddings for " +
                         std::to_string(masked_y.batch) + " sequences");
  }
  const auto tokens = embed(masked_y);
  std::vector<std::int32_t> owner(masked_y.batch * masked_y.seq);
  for (std::size_t r = 0; r < owner.size(); ++r) owner[r] = static_cast<std::int32_t>(r / masked_y.seq);
  const auto spread = gather_rows(context, owner);
  const auto input = where_rows(masked_y.first_position_mask(), spread, tokens);
  return run_stack(cotmae_decoder_, input, masked_y);
}

template <typename T>
Tensor<T> Model<T>::cotmae_decoder_forward(const Tensor<T>& context, const TokenBatch& masked_y) const {
  return mlm_logits(cotmae_decoder_hidden(context, masked_y));
}

template <typename T>
void Model<T>::for_each_parameter(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn("embeddings.token", token_embedding_);
  fn("embeddings.position", position_embedding_);
  fn("embeddings.ln.gamma", embedding_ln_gamma_);
  fn("embeddings.ln.beta", embedding_ln_beta_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].for_each("encoder." + std::to_string(i) + ".", fn);
  if (!config_.tie_weights) fn("mlm.weight", mlm_weight_);
  fn("mlm.bias", mlm_bias_);
  for (std::size_t i = 0; i < condenser_head_.size(); ++i) {
    condenser_head_[i].for_each("condenser_head." + std::to_string(i) + ".", fn);
  }
  for (std::size_t i = 0; i < cotmae_decoder_.size(); ++i) {
    cotmae_decoder_[i].for_each("cotmae_decoder." + std::to_string(i) + ".", fn);
  }
}

template <typename T>
std::vector<NamedParameter<T>> Model<T>::named_parameters() const {
  std::vector<NamedParameter<T>> out;
  const_cast<Model*>(this)->for_each_parameter(
      [&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for_each_parameter([](const std::string&, Tensor<T>& t) {
    if (t.requires_grad()) t.zero_grad();
  });
}

template <typename T>
void Model<T>::set_heads_trainable(bool trainable) {
  for_each_parameter([trainable](const std::string& name, Tensor<T>& t) {
    if (name.starts_with("condenser_head.") || name.starts_with("cotmae_decoder.")) t.set_requires_grad(trainable);
  });
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy = *this;
  copy.for_each_parameter([](const std::string&, Tensor<T>& t) { t = t.clone(); });
  return copy;
}

template <typename T>
Model<T> Model<T>::encoder_only() const {
  Model copy = clone();
  copy.parts_ = ModelParts{};
  copy.condenser_head_.clear();
  copy.cotmae_decoder_.clear();
  return copy;
}

template <typename T>
Model<T> Model<T>::with_parts(ModelParts parts, std::uint64_t seed) const {
  Model fresh(config_, parts, seed);
  std::map<std::string, Tensor<T>> mine;
  for (auto& p : named_parameters()) mine.emplace(p.name, p.tensor);
  fresh.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
    auto it = mine.find(name);
    if (it != mine.end()) t = it->second.clone();
  });
  return fresh;
}

template struct TransformerLayer<float>;
template struct TransformerLayer<double>;
template struct HiddenStates<float>;
template struct HiddenStates<double>;
template class Model<float>;
template class Model<double>;

}  // namespace qac
