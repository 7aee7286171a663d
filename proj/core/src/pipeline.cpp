// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "qac/checkpoint.hpp"
#include "qac/dense.hpp"
#include "qac/error.hpp"
#include "qac/objectives.hpp"
#include "qac/optim.hpp"
#include "qac/querygen.hpp"
#include "qac/synthetic.hpp"

namespace qac {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_finite(const std::string& phase, std::size_t step, const StepRecord& record) {
  for (const auto& [name, value] : record.losses) {
    if (std::isfinite(value)) continue;
    std::string parts;
    for (const auto& [n, v] : record.losses) parts += " " + n + "=" + std::to_string(v);
    throw NumericError(phase + ": non-finite loss at step " + std::to_string(step) + ":" + parts);
  }
}

std::vector<TokenSequence> inputs_of(std::span<const TrainingPair> pairs, bool context, const ModelConfig& cfg) {
  std::vector<TokenSequence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(model_input(context ? p.y : p.x, cfg.special, cfg.max_seq_len));
  return out;
}

// Cycles through shuffled epochs of training pairs, never mixing two epochs
// in one batch so pair ids stay unique within a batch.
class PairStream {
 public:
  PairStream(const ExperimentConfig& config, const PassageStore& store, const QueryMap& queries)
      : config_(config), store_(store), queries_(queries), rng_(stream_seed(config.seed, "pairs")) {}

  std::vector<TrainingPair> next(std::size_t batch_size) {
    if (cursor_ + batch_size > epoch_.size()) refill();
    const auto take = std::min(batch_size, epoch_.size());
    std::vector<TrainingPair> out(epoch_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  epoch_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return out;
  }

 private:
  void refill() {
    epoch_ = make_pairs(config_.pretrain.context, store_, queries_, rng_, config_.pretrain.mix_probability);
    if (epoch_.size() < 2) throw DataError("pre-training needs at least 2 training pairs per epoch");
    std::shuffle(epoch_.begin(), epoch_.end(), rng_);
    cursor_ = 0;
  }

  const ExperimentConfig& config_;
  const PassageStore& store_;
  const QueryMap& queries_;
  std::mt19937_64 rng_;
  std::vector<TrainingPair> epoch_;
  std::size_t cursor_ = 0;
};

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(seed ^ splitmix64(h));
}

ModelParts parts_for(Objective objective) {
  switch (objective) {
    case Objective::mlm: return {};
    case Objective::cocondenser: return {true, false};
    case Objective::cotmae: return {false, true};
  }
  return {};
}

PreparedCorpus prepare_corpus(const ExperimentConfig& config, std::span<const Document> docs) {
  if (docs.empty()) throw DataError("no documents in corpus");
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(d.text);
  PreparedCorpus out{Vocabulary::build(texts, config.corpus.min_frequency, config.corpus.max_vocab), {}, {}, {}, {}};
  out.store = PassageStore::from_documents(docs, out.vocab, config.corpus.max_passage_tokens);
  if (out.store.empty()) throw DataError("corpus produced no passages");
  out.query_stopwords = stopword_ids(out.vocab, english_stopwords());
  if (config.corpus.stopwords == "english") out.bm25_stopwords = out.query_stopwords;
  std::vector<TokenSequence> docs_tokens;
  docs_tokens.reserve(out.store.size());
  for (const auto& p : out.store.passages()) docs_tokens.push_back(p.tokens);
  out.index = InvertedIndex::build(docs_tokens, out.bm25_stopwords);
  return out;
}

QueryMap lexical_queries(const PreparedCorpus& corpus, std::size_t count, std::uint64_t seed) {
  const LexicalQuerySampler sampler(corpus.store, corpus.query_stopwords, corpus.vocab.special());
  return generate_lexical_queries(corpus.store, sampler, count, seed);
}

QueryMap provide_queries(const ExperimentConfig& config, const PreparedCorpus& corpus) {
  const auto seed = stream_seed(config.seed, "queries");
  switch (config.queries.provider) {
    case QueryProvider::lexical: return lexical_queries(corpus, config.queries.count, seed);
    case QueryProvider::file: {
      auto queries = read_queries(config.queries.file, corpus.vocab);
      for (const auto& p : corpus.store.passages()) {
        if (!queries.contains(p.key())) throw DataError("query file has no candidates for passage " + p.key());
      }
      return queries;
    }
    case QueryProvider::seq2seq: {
      const auto model = load_generator(config.queries.generator);
      if (model.config().vocab_size < corpus.vocab.size()) {
        throw ConfigError("queries.generator: checkpoint vocabulary is smaller than the corpus vocabulary");
      }
      std::mt19937_64 rng(seed);
      auto spec = config.queries.sampling;
      spec.seed = seed;
      QueryMap out;
      for (const auto& p : corpus.store.passages()) {
        CandidateQuerySet set{p.doc_id, p.passage_index, {}};
        std::set<TokenSequence> seen;
        for (std::size_t attempt = 0; set.queries.size() < config.queries.count && attempt < 20 * config.queries.count;
             ++attempt) {
          auto q = toy_seq2seq_generate(model, p.tokens, spec, rng);
          if (!q.empty() && seen.insert(q).second) set.queries.push_back(std::move(q));
        }
        if (set.queries.empty()) throw DataError("generator produced no query for passage " + p.key());
        for (std::size_t i = 0; set.queries.size() < config.queries.count; ++i) set.queries.push_back(set.queries[i]);
        out.emplace(p.key(), std::move(set));
      }
      return out;
    }
  }
  throw ConfigError("queries.provider: unsupported provider");
}

std::vector<TrainingPair> make_pairs(ContextMode mode, const PassageStore& store, const QueryMap& queries,
                                     std::mt19937_64& rng, double mix_probability) {
  switch (mode) {
    case ContextMode::passage: return make_passage_pairs(store, rng);
    case ContextMode::query: return make_query_pairs(store, queries, rng);
    case ContextMode::mixed: return make_mixed_pairs(store, queries, rng, mix_probability);
  }
  return {};
}

Model<float> initial_encoder(const ExperimentConfig& config, const ModelConfig& model_config) {
  return Model<float>(model_config, ModelParts{}, stream_seed(config.seed, "init"));
}

Model<float> pretrain_model(const ExperimentConfig& config, const ModelConfig& model_config,
                            const PassageStore& store, const QueryMap& queries, const StepObserver& observer) {
  config.validate();
  const auto& settings = config.pretrain;
  // Heads take their own init stream so every arm shares the encoder init.
  Model<float> model = initial_encoder(config, model_config).with_parts(parts_for(settings.objective),
                                                                        stream_seed(config.seed, "heads"));
  const auto& special = model_config.special;
  const auto vocab = model_config.vocab_size;
  const auto encoder_masking = settings.encoder_masking(config.seed);
  const auto decoder_masking = settings.decoder_masking(config.seed);
  std::mt19937_64 mask_rng(stream_seed(config.seed, "mask"));
  PairStream stream(config, store, queries);
  AdamWState<float> opt;
  opt.weight_decay = settings.weight_decay;
  auto params = model.parameters();

  for (std::size_t step = 0; step < settings.steps; ++step) {
    const auto pairs = stream.next(settings.batch_size);
    const auto xs = inputs_of(pairs, false, model_config);
    const auto mx = mask_batch(xs, encoder_masking, special, vocab, mask_rng);
    model.zero_grad();

    StepRecord record{"pretrain", step, settings.learning_rate * linear_schedule(static_cast<std::int64_t>(step),
                                                                                  static_cast<std::int64_t>(settings.steps),
                                                                                  settings.warmup_ratio),
                      {}};
    Tensor<float> total;
    switch (settings.objective) {
      case Objective::mlm: {
        const auto xb = mx.pack(special.pad);
        total = mlm_loss_from_hidden(model, model.encode(xb).layers.back(), mx, xb.seq);
        record.losses = {{"total", total.item()}, {"mlm", total.item()}};
        break;
      }
      case Objective::cocondenser: {
        const auto ys = inputs_of(pairs, true, model_config);
        const auto my = mask_batch(ys, encoder_masking, special, vocab, mask_rng);
        std::vector<std::uint64_t> ids;
        for (const auto& p : pairs) ids.push_back(p.x_ordinal);
        const auto loss = cocondenser_total_loss(model, mx, my, settings.temperature, ids);
        total = loss.total;
        record.losses = {{"total", loss.total.item()},
                         {"mlm", loss.mlm.item()},
                         {"mlm_aux", loss.mlm_aux.item()},
                         {"contrastive", loss.contrastive.item()}};
        break;
      }
      case Objective::cotmae: {
        const auto ys = inputs_of(pairs, true, model_config);
        const auto my = mask_batch(ys, decoder_masking, special, vocab, mask_rng);
        const auto loss = cotmae_total_loss(model, mx, my);
        total = loss.total;
        record.losses = {{"total", loss.total.item()}, {"mlm", loss.mlm.item()}, {"ctx_mlm", loss.ctx_mlm.item()}};
        break;
      }
    }
    check_finite("pretrain", step, record);
    if (total.requires_grad()) total.backward();
    opt.learning_rate = record.learning_rate;
    adamw_step(std::span<Tensor<float>>(params), opt);
    if (observer) observer(record);
  }
  return model;
}

NegativePools bm25_negative_pools(const PreparedCorpus& corpus, std::span<const LabeledQuery> queries,
                                  std::size_t depth, const Bm25Params& params) {
  NegativePools pools;
  pools.reserve(queries.size());
  for (const auto& q : queries) {
    const std::unordered_set<std::size_t> positives(q.positives.begin(), q.positives.end());
    const auto ranked = bm25_search(corpus.index, q.tokens, depth + positives.size(), params);
    pools.push_back(negative_pool(ranked, positives, depth, NegativeSource::bm25));
  }
  return pools;
}

EmbeddingMatrix encode_queries(const Model<float>& model, std::span<const LabeledQuery> queries,
                               std::size_t batch_size) {
  std::vector<TokenSequence> seqs;
  std::vector<std::string> ids;
  for (const auto& q : queries) {
    seqs.push_back(q.tokens);
    ids.push_back(q.qid);
  }
  return encode_sequences(model, seqs, ids, batch_size);
}

NegativePools dense_negative_pools(const Model<float>& retriever, const PassageStore& store,
                                   std::span<const LabeledQuery> queries, std::size_t depth, std::size_t batch_size) {
  const auto corpus = encode_corpus(retriever, store, batch_size);
  const auto qemb = encode_queries(retriever, queries, batch_size);
  std::size_t widest = 0;
  for (const auto& q : queries) widest = std::max(widest, q.positives.size());
  const auto hits = dense_search_ordinals(corpus, qemb, depth + widest);
  NegativePools pools;
  pools.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::unordered_set<std::size_t> positives(queries[i].positives.begin(), queries[i].positives.end());
    pools.push_back(negative_pool(hits[i], positives, depth, NegativeSource::dense));
  }
  return pools;
}

Model<float> finetune_retriever(const FinetuneSettings& settings, const Model<float>& init,
                                const PassageStore& store, std::span<const LabeledQuery> queries,
                                const NegativePools& pools, std::uint64_t seed, std::string_view phase,
                                const StepObserver& observer) {
  if (queries.empty()) throw DataError(std::string(phase) + ": no training queries");
  if (pools.size() != queries.size()) throw DimensionError(std::string(phase) + ": one negative pool per query required");
  for (const auto& q : queries) {
    if (q.positives.empty()) throw DataError(std::string(phase) + ": query " + q.qid + " has no positive passage");
  }
  auto model = init.encoder_only();
  const auto& cfg = model.config();
  std::mt19937_64 rng(seed);
  AdamWState<float> opt;
  opt.weight_decay = settings.weight_decay;
  auto params = model.parameters();
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const auto batch_size = std::min(settings.batch_size, queries.size());

  for (std::size_t step = 0; step < settings.steps; ++step) {
    std::vector<TokenSequence> qs, ps, negs;
    std::vector<std::size_t> positive_column;
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto qi = order[cursor++];
      const auto& q = queries[qi];
      qs.push_back(model_input(q.tokens, cfg.special, cfg.max_seq_len));
      const auto pos = q.positives[std::uniform_int_distribution<std::size_t>(0, q.positives.size() - 1)(rng)];
      positive_column.push_back(ps.size());
      ps.push_back(model_input(store[pos].tokens, cfg.special, cfg.max_seq_len));
      const std::unordered_set<std::size_t> positives(q.positives.begin(), q.positives.end());
      const auto mined = sample_negatives(pools[qi], positives, settings.negatives, store.size(), rng);
      for (auto o : mined.ordinals()) negs.push_back(model_input(store[o].tokens, cfg.special, cfg.max_seq_len));
    }
    ps.insert(ps.end(), negs.begin(), negs.end());

    model.zero_grad();
    const auto qe = model.encode(TokenBatch::pack(qs, cfg.special.pad)).embedding();
    const auto pe = model.encode(TokenBatch::pack(ps, cfg.special.pad)).embedding();
    auto loss = infonce_loss(qe, pe, positive_column, 1.0);
    StepRecord record{std::string(phase), step,
                      settings.learning_rate * linear_schedule(static_cast<std::int64_t>(step),
                                                               static_cast<std::int64_t>(settings.steps),
                                                               settings.warmup_ratio),
                      {{"total", loss.item()}, {"infonce", loss.item()}}};
    check_finite(std::string(phase), step, record);
    loss.backward();
    opt.learning_rate = record.learning_rate;
    adamw_step(std::span<Tensor<float>>(params), opt);
    if (observer) observer(record);
  }
  return model;
}

RankedRun retrieve(const Model<float>& model, const PassageStore& store, std::span<const LabeledQuery> queries,
                   std::size_t depth, std::size_t batch_size) {
  const auto corpus = encode_corpus(model, store, batch_size);
  return dense_search(corpus, encode_queries(model, queries, batch_size), depth);
}

RankedRun retrieve_bm25(const PreparedCorpus& corpus, std::span<const LabeledQuery> queries, std::size_t depth,
                        const Bm25Params& params) {
  RankedRun run;
  for (const auto& q : queries) {
    std::vector<RunEntry> entries;
    for (const auto& hit : bm25_search(corpus.index, q.tokens, depth, params)) {
      entries.push_back({corpus.store[hit.ordinal].key(), hit.score});
    }
    run.add(q.qid, std::move(entries));
  }
  return run;
}

QrelSet qrels_for(const PassageStore& store, std::span<const LabeledQuery> queries) {
  QrelSet qrels;
  for (const auto& q : queries) {
    for (auto p : q.positives) qrels.add(q.qid, store[p].key(), 1);
  }
  return qrels;
}

RetrievalScores score_run(const RankedRun& run, const QrelSet& qrels) {
  return {mrr_at_k(run, qrels, 10).value, recall_at_k(run, qrels, 50).value, recall_at_k(run, qrels, 1000).value};
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const PreparedCorpus& corpus,
                                 const QueryMap& candidates, std::span<const LabeledQuery> train,
                                 std::span<const LabeledQuery> test, const StepObserver& observer) {
  config.validate();
  const auto model_config = resolve_model_config(config, corpus.vocab.size());
  ExperimentOutcome out;
  Model<float> init = initial_encoder(config, model_config);
  if (config.finetune.init == FinetuneInit::pretrained) {
    bool first = true;
    const auto pretrained = pretrain_model(config, model_config, corpus.store, candidates, [&](const StepRecord& r) {
      if (first) out.pretrain_first_loss = r.losses.front().second;
      first = false;
      out.pretrain_last_loss = r.losses.front().second;
      if (observer) observer(r);
    });
    init = pretrained.encoder_only();
  }
  const auto& ft = config.finetune;
  const auto qrels = qrels_for(corpus.store, test);
  const auto depth = std::min(config.eval.depth, corpus.store.size());

  const auto pools1 = bm25_negative_pools(corpus, train, ft.negative_depth, config.bm25);
  const auto retriever1 =
      finetune_retriever(ft, init, corpus.store, train, pools1, stream_seed(config.seed, "finetune1"), "finetune1", observer);
  out.retriever1 = score_run(retrieve(retriever1, corpus.store, test, depth, config.encode_batch_size), qrels);

  const auto pools2 =
      dense_negative_pools(retriever1, corpus.store, train, ft.negative_depth, config.encode_batch_size);
  const auto retriever2 =
      finetune_retriever(ft, init, corpus.store, train, pools2, stream_seed(config.seed, "finetune2"), "finetune2", observer);
  out.retriever2 = score_run(retrieve(retriever2, corpus.store, test, depth, config.encode_batch_size), qrels);
  return out;
}

std::pair<std::vector<LabeledQuery>, std::vector<LabeledQuery>> make_labeled_queries(
    const PreparedCorpus& corpus, std::size_t train_count, std::size_t test_count, std::uint64_t seed) {
  if (train_count + test_count > corpus.store.size()) {
    throw ConfigError("labeled queries: " + std::to_string(train_count + test_count) + " requested from " +
                      std::to_string(corpus.store.size()) + " passages");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> ordinals(corpus.store.size());
  std::iota(ordinals.begin(), ordinals.end(), std::size_t{0});
  std::shuffle(ordinals.begin(), ordinals.end(), rng);
  const LexicalQuerySampler sampler(corpus.store, corpus.query_stopwords, corpus.vocab.special());
  auto make = [&](std::size_t begin, std::size_t end, const char* prefix) {
    std::vector<LabeledQuery> out;
    for (std::size_t i = begin; i < end; ++i) {
      const auto o = ordinals[i];
      out.push_back({prefix + std::to_string(i - begin), sampler.sample_one(corpus.store[o].tokens, rng), {o}});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.positives[0] < b.positives[0]; });
    return out;
  };
  auto train = make(0, train_count, "train-");
  auto test = make(train_count, train_count + test_count, "test-");
  return {std::move(train), std::move(test)};
}

void write_labeled_queries(const std::filesystem::path& queries_path, const std::filesystem::path& qrels_path,
                           std::span<const LabeledQuery> queries, const PreparedCorpus& corpus) {
  std::ofstream out(queries_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + queries_path.string());
  for (const auto& q : queries) out << q.qid << '\t' << corpus.vocab.decode(q.tokens) << '\n';
  if (!out) throw IoError("failed writing " + queries_path.string());
  write_qrels(qrels_path, qrels_for(corpus.store, queries));
}

std::vector<LabeledQuery> read_query_texts(const std::filesystem::path& queries_path, const Vocabulary& vocab) {
  std::ifstream in(queries_path);
  if (!in) throw IoError("cannot open queries " + queries_path.string());
  std::vector<LabeledQuery> out;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const auto where = queries_path.string() + ":" + std::to_string(n);
    if (tab == std::string::npos || tab == 0) throw DataError(where + ": expected 'qid<TAB>text'");
    LabeledQuery q{line.substr(0, tab), vocab.encode(std::string_view(line).substr(tab + 1)), {}};
    if (q.tokens.empty()) throw DataError(where + ": empty query " + q.qid);
    if (!seen.insert(q.qid).second) throw DataError(where + ": duplicate query id " + q.qid);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<LabeledQuery> read_labeled_queries(const std::filesystem::path& queries_path,
                                               const std::filesystem::path& qrels_path, const Vocabulary& vocab,
                                               const PassageStore& store) {
  auto queries = read_query_texts(queries_path, vocab);
  const auto qrels = read_qrels(qrels_path);
  std::vector<LabeledQuery> out;
  for (auto& q : queries) {
    auto it = qrels.judgments.find(q.qid);
    if (it != qrels.judgments.end()) {
      for (const auto& [pid, rel] : it->second) {
        if (rel > 0) q.positives.push_back(store.ordinal(pid));
      }
    }
    if (q.positives.empty()) {
      spdlog::warn("query {} has no relevant passage; skipped", q.qid);
      continue;
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw DataError("no judged queries in " + queries_path.string());
  return out;
}

}  // namespace qac
