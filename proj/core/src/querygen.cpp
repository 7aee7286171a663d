// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/querygen.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "qac/checkpoint.hpp"
#include "qac/error.hpp"
#include "qac/objectives.hpp"
#include "qac/optim.hpp"

namespace qac {

void SamplingSpec::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampling.top_p: must lie in (0,1]");
  if (top_k == 0) throw ConfigError("sampling.top_k: must be at least 1");
  if (max_query_len == 0 || max_query_len >= kMaxPassageTokens) {
    throw ConfigError("sampling.max_query_len: must lie in [1," + std::to_string(kMaxPassageTokens) + ")");
  }
}

NucleusSupport nucleus_support(std::span<const double> dist, const SamplingSpec& spec) {
  spec.validate();
  double total = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ContractError("nucleus_sample: probabilities must be finite and >= 0");
    total += p;
  }
  if (total <= 0.0) throw ContractError("nucleus_sample: distribution has no mass");
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("nucleus_sample: distribution sums to " + std::to_string(total) + ", not 1");
  }
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  NucleusSupport out;
  double mass = 0.0;
  for (std::size_t i = 0; i < order.size() && i < spec.top_k; ++i) {
    if (dist[order[i]] <= 0.0) break;
    out.ids.push_back(order[i]);
    out.probs.push_back(dist[order[i]]);
    mass += dist[order[i]];
    if (mass >= spec.top_p - 1e-12) break;
  }
  for (auto& p : out.probs) p /= mass;
  return out;
}

std::size_t nucleus_sample(std::span<const double> dist, const SamplingSpec& spec, std::mt19937_64& rng) {
  const auto support = nucleus_support(dist, spec);
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i + 1 < support.ids.size(); ++i) {
    if (u < support.probs[i]) return support.ids[i];
    u -= support.probs[i];
  }
  return support.ids.back();
}

LexicalQuerySampler::LexicalQuerySampler(const PassageStore& store, std::span<const TokenId> stopwords,
                                         const SpecialTokens& special)
    : special_(special), stopwords_(stopwords.begin(), stopwords.end()), passages_(store.size()) {
  for (const auto& p : store.passages()) {
    std::set<TokenId> seen(p.tokens.begin(), p.tokens.end());
    for (auto id : seen) {
      if (id < 0) continue;
      if (static_cast<std::size_t>(id) >= df_.size()) df_.resize(static_cast<std::size_t>(id) + 1, 0);
      ++df_[static_cast<std::size_t>(id)];
    }
  }
}

double LexicalQuerySampler::idf(TokenId id) const {
  const double df = id >= 0 && static_cast<std::size_t>(id) < df_.size() ? double(df_[static_cast<std::size_t>(id)]) : 0.0;
  const double n = double(passages_);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

bool LexicalQuerySampler::is_content(TokenId id) const {
  return !special_.is_special(id) && !stopwords_.contains(id);
}

TokenSequence LexicalQuerySampler::sample_one(const TokenSequence& passage, std::mt19937_64& rng) const {
  std::vector<TokenId> terms;
  std::vector<double> weights;
  auto collect = [&](auto&& keep, bool weighted) {
    std::map<TokenId, std::size_t> tf;
    for (auto id : passage) {
      if (keep(id)) ++tf[id];
    }
    for (const auto& [id, n] : tf) {
      terms.push_back(id);
      weights.push_back(weighted ? double(n) * idf(id) : 1.0);
    }
  };
  collect([&](TokenId id) { return is_content(id); }, true);
  if (terms.empty()) collect([&](TokenId id) { return !special_.is_special(id); }, false);
  if (terms.empty()) throw DataError("cannot sample a query from a passage without regular tokens");

  const auto length = std::uniform_int_distribution<std::size_t>(kMinTokens, kMaxTokens)(rng);
  TokenSequence query;
  std::vector<double> remaining = weights;
  for (std::size_t i = 0; i < length; ++i) {
    if (std::all_of(remaining.begin(), remaining.end(), [](double w) { return w <= 0.0; })) remaining = weights;
    std::discrete_distribution<std::size_t> pick(remaining.begin(), remaining.end());
    const auto j = pick(rng);
    query.push_back(terms[j]);
    remaining[j] = 0.0;
  }
  return query;
}

CandidateQuerySet LexicalQuerySampler::sample(const Passage& passage, std::size_t count, std::mt19937_64& rng) const {
  if (count == 0) throw ConfigError("queries.count: must be at least 1");
  if (passage.tokens.empty()) throw DataError("cannot sample queries for empty passage " + passage.key());
  CandidateQuerySet out{passage.doc_id, passage.passage_index, {}};
  std::set<TokenSequence> seen;
  for (std::size_t attempt = 0; out.queries.size() < count && attempt < 50 * count; ++attempt) {
    auto q = sample_one(passage.tokens, rng);
    if (seen.insert(q).second) out.queries.push_back(std::move(q));
  }
  if (out.queries.size() < count) {
    spdlog::warn("passage {} only supports {} distinct queries; repeating to reach {}", passage.key(),
                 out.queries.size(), count);
    for (std::size_t i = 0; out.queries.size() < count; ++i) out.queries.push_back(out.queries[i]);
  }
  return out;
}

std::vector<TokenId> stopword_ids(const Vocabulary& vocab, std::span<const std::string> words) {
  std::set<TokenId> ids;
  for (const auto& w : words) {
    if (vocab.contains(w)) ids.insert(vocab.id(w));
  }
  for (std::size_t i = static_cast<std::size_t>(vocab.special().first_regular); i < vocab.size(); ++i) {
    const auto& w = vocab.word(static_cast<TokenId>(i));
    if (std::none_of(w.begin(), w.end(), [](unsigned char c) { return std::isalnum(c) || c >= 0x80; })) {
      ids.insert(static_cast<TokenId>(i));
    }
  }
  return {ids.begin(), ids.end()};
}

QueryMap generate_lexical_queries(const PassageStore& store, const LexicalQuerySampler& sampler, std::size_t count,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  QueryMap out;
  for (const auto& p : store.passages()) out.emplace(p.key(), sampler.sample(p, count, rng));
  return out;
}

namespace {

template <typename T>
TokenSequence with_cls(const TokenSequence& tokens, const SpecialTokens& special, std::size_t limit) {
  TokenSequence out{special.cls};
  out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(std::min(limit, tokens.size())));
  return out;
}

}  // namespace

template <typename T>
TokenSequence toy_seq2seq_generate(const Model<T>& model, const TokenSequence& passage, const SamplingSpec& spec,
                                   std::mt19937_64& rng) {
  spec.validate();
  if (!model.parts().cotmae_decoder) throw DependencyError("toy_seq2seq_generate: model has no decoder");
  NoGradGuard no_grad;
  const auto& special = model.config().special;
  const auto x = with_cls<T>(passage, special, model.config().max_seq_len - 1);
  const auto hx = model.encode(TokenBatch::pack(std::span<const TokenSequence>(&x, 1), special.pad)).embedding();

  TokenSequence query;
  while (query.size() < spec.max_query_len) {
    TokenSequence y{special.cls};
    y.insert(y.end(), query.begin(), query.end());
    y.push_back(special.mask);
    const auto yb = TokenBatch::pack(std::span<const TokenSequence>(&y, 1), special.pad);
    const auto hidden = model.cotmae_decoder_hidden(hx, yb);
    const std::int32_t last = static_cast<std::int32_t>(y.size() - 1);
    const auto logits = model.mlm_logits(gather_rows(hidden, std::span<const std::int32_t>(&last, 1)));
    const auto row = logits.data();

    std::vector<double> probs(row.size(), 0.0);
    double peak = -INFINITY;
    for (std::size_t v = 0; v < row.size(); ++v) {
      const auto id = static_cast<TokenId>(v);
      const bool allowed = !special.is_special(id) || (id == special.sep && !query.empty());
      if (allowed) peak = std::max(peak, double(row[v]));
    }
    double total = 0.0;
    for (std::size_t v = 0; v < row.size(); ++v) {
      const auto id = static_cast<TokenId>(v);
      const bool allowed = !special.is_special(id) || (id == special.sep && !query.empty());
      if (allowed) total += probs[v] = std::exp(double(row[v]) - peak);
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("toy_seq2seq_generate: non-finite logits");
    for (auto& p : probs) p /= total;
    const auto next = static_cast<TokenId>(nucleus_sample(probs, spec, rng));
    if (next == special.sep) break;
    query.push_back(next);
  }
  return query;
}

Model<float> load_generator(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) {
    throw LoadError("generator checkpoint " + checkpoint.string() + " does not exist");
  }
  auto model = load_checkpoint<float>(checkpoint);
  if (!model.parts().cotmae_decoder) {
    throw LoadError("generator checkpoint " + checkpoint.string() + " carries no decoder");
  }
  return model;
}

void train_generator(Model<float>& model, std::span<const TrainingPair> pairs, const GeneratorTraining& settings) {
  if (!model.parts().cotmae_decoder) throw DependencyError("train_generator: model has no decoder");
  if (pairs.empty()) throw DataError("train_generator: no training pairs");
  if (settings.batch_size == 0) throw ConfigError("generator.batch_size: must be positive");
  const auto& special = model.config().special;
  const std::size_t limit = model.config().max_seq_len - 2;
  std::mt19937_64 rng(settings.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  AdamWState<float> opt;
  auto params = model.parameters();

  for (std::size_t step = 0; step < settings.steps; ++step) {
    std::vector<TokenSequence> xs;
    MaskedBatch ys;
    for (std::size_t b = 0; b < settings.batch_size; ++b) {
      const auto& pair = pairs[pick(rng)];
      xs.push_back(with_cls<float>(pair.x, special, model.config().max_seq_len - 1));
      const std::size_t len = std::min(pair.y.size(), limit);
      const auto cut = std::uniform_int_distribution<std::size_t>(0, len)(rng);
      MaskedSequence m;
      m.tokens = with_cls<float>(pair.y, special, cut);
      m.tokens.push_back(special.mask);
      m.positions.push_back(cut + 1);
      m.targets.push_back(cut < len ? pair.y[cut] : special.sep);
      ys.sequences.push_back(std::move(m));
    }
    model.zero_grad();
    const auto hx = model.encode(TokenBatch::pack(xs, special.pad)).embedding();
    const auto yb = ys.pack(special.pad);
    auto loss = mlm_loss_from_hidden(model, model.cotmae_decoder_hidden(hx, yb), ys, yb.seq);
    if (!std::isfinite(loss.item())) throw NumericError("train_generator: non-finite loss at step " + std::to_string(step));
    loss.backward();
    opt.learning_rate = static_cast<float>(settings.learning_rate * linear_schedule(step, settings.steps, 0.1));
    adamw_step(std::span<Tensor<float>>(params), opt);
  }
}

template TokenSequence toy_seq2seq_generate<float>(const Model<float>&, const TokenSequence&, const SamplingSpec&,
                                                   std::mt19937_64&);
template TokenSequence toy_seq2seq_generate<double>(const Model<double>&, const TokenSequence&, const SamplingSpec&,
                                                    std::mt19937_64&);

}  // namespace qac
