// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/stages.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "qac/checkpoint.hpp"
#include "qac/dense.hpp"
#include "qac/error.hpp"

namespace qac {

namespace fs = std::filesystem;

namespace {

using nlohmann::json;

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Writes every step to a TSV log and echoes every log_every-th step.
class LossLog {
 public:
  LossLog(const fs::path& path, std::size_t every, const StepObserver& next)
      : out_(path, std::ios::binary | std::ios::trunc), every_(every), next_(next) {
    if (!out_) throw IoError("cannot write " + path.string());
  }

  StepObserver observer() {
    return [this](const StepRecord& r) {
      if (!header_) {
        out_ << "phase\tstep\tlr";
        for (const auto& [name, v] : r.losses) out_ << '\t' << name;
        out_ << '\n';
        header_ = true;
      }
      out_ << r.phase << '\t' << r.step << '\t' << fixed(r.learning_rate, 9);
      std::string line;
      for (const auto& [name, v] : r.losses) {
        out_ << '\t' << fixed(v);
        line += " " + name + "=" + fixed(v, 4);
      }
      out_ << '\n';
      if (r.step % every_ == 0) spdlog::info("{} step {}{}", r.phase, r.step, line);
      if (next_) next_(r);
    };
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing loss log");
  }

 private:
  std::ofstream out_;
  std::size_t every_;
  StepObserver next_;
  bool header_ = false;
};

Manifest start_manifest(const ExperimentConfig& config, std::string stage) {
  Manifest m;
  m.stage = std::move(stage);
  m.seed = config.seed;
  m.config_sha256 = sha256_hex(config.canonical());
  return m;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw DependencyError(what + " not found at " + path.string());
}

void add_stage_input(Manifest& m, const StageDirs& dirs, const fs::path& file) {
  m.add_input(file, fs::relative(file, dirs.root).generic_string());
}

// User-supplied paths keep their spelling unless they point into the run
// directory, so identical runs in different workdirs hash the same.
void add_user_input(Manifest& m, const StageDirs& dirs, const fs::path& file) {
  const auto rel = fs::weakly_canonical(file).lexically_relative(fs::weakly_canonical(dirs.root));
  if (!rel.empty() && *rel.begin() != "..") {
    m.add_input(file, rel.generic_string());
  } else {
    m.add_input(file);
  }
}

std::vector<LabeledQuery> training_queries(const ExperimentConfig& config, const PreparedCorpus& corpus) {
  if (config.finetune.train_queries.empty() || config.finetune.train_qrels.empty()) {
    throw ConfigError("finetune.train_queries and finetune.train_qrels: both are required");
  }
  return read_labeled_queries(config.finetune.train_queries, config.finetune.train_qrels, corpus.vocab, corpus.store);
}

void write_pools(const fs::path& path, std::span<const LabeledQuery> queries, const NegativePools& pools,
                 const PassageStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    json negatives = json::array();
    for (const auto& n : pools[i]) {
      negatives.push_back(
          {{"pid", store[n.ordinal].key()}, {"rank", n.rank}, {"score", fixed(n.score)}, {"source", to_string(n.source)}});
    }
    out << json{{"qid", queries[i].qid}, {"negatives", negatives}}.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Model<float> load_model(const fs::path& path, const ModelConfig& expected) {
  return load_checkpoint<float>(path, expected);
}

}  // namespace

StageDirs::StageDirs(fs::path workdir)
    : root(std::move(workdir)),
      prep(root / "prep"),
      pretrain(root / "pretrain"),
      finetune1(root / "finetune1"),
      finetune2(root / "finetune2") {}

const fs::path& StageDirs::finetune(int stage) const {
  if (stage == 1) return finetune1;
  if (stage == 2) return finetune2;
  throw ConfigError("finetune stage must be 1 or 2");
}

PreparedCorpus load_prepared(const StageDirs& dirs) {
  require_file(dirs.prep / "manifest.json", "prep outputs");
  PreparedCorpus corpus{Vocabulary::load(dirs.prep / "vocab.txt"), PassageStore::load(dirs.prep / "passages.jsonl"),
                        InvertedIndex::load(dirs.prep / "bm25.idx"), {}, {}};
  corpus.query_stopwords = stopword_ids(corpus.vocab, english_stopwords());
  return corpus;
}

QueryMap load_candidates(const StageDirs& dirs, const Vocabulary& vocab) {
  return read_queries(dirs.prep / "queries.jsonl", vocab);
}

Manifest run_prep(const ExperimentConfig& config) {
  config.validate();
  if (config.corpus.input.empty()) throw ConfigError("corpus.input: a corpus file is required");
  const auto docs = read_documents(config.corpus.input);
  if (docs.empty()) throw DataError("no documents in " + config.corpus.input);
  const auto corpus = prepare_corpus(config, docs);
  const auto candidates = provide_queries(config, corpus);

  const StageDirs dirs(config.workdir);
  fs::create_directories(dirs.prep);
  corpus.vocab.save(dirs.prep / "vocab.txt");
  corpus.store.save(dirs.prep / "passages.jsonl");
  write_queries(dirs.prep / "queries.jsonl", candidates, corpus.vocab);
  corpus.index.save(dirs.prep / "bm25.idx");
  std::mt19937_64 rng(stream_seed(config.seed, "pairs"));
  const auto pairs = make_pairs(config.pretrain.context, corpus.store, candidates, rng, config.pretrain.mix_probability);
  write_pairs(dirs.prep / "pairs.jsonl", pairs, corpus.vocab);

  auto m = start_manifest(config, "prep");
  m.settings = {{"documents", std::to_string(docs.size())},
                {"passages", std::to_string(corpus.store.size())},
                {"vocabulary", std::to_string(corpus.vocab.size())},
                {"context", std::string(to_string(config.pretrain.context))},
                {"query_provider", std::string(to_string(config.queries.provider))},
                {"query_count", std::to_string(config.queries.count)}};
  m.add_input(config.corpus.input);
  if (config.queries.provider == QueryProvider::file) m.add_input(config.queries.file);
  if (config.queries.provider == QueryProvider::seq2seq) m.add_input(config.queries.generator);
  for (const char* name : {"vocab.txt", "passages.jsonl", "queries.jsonl", "bm25.idx", "pairs.jsonl"}) {
    m.add_output(dirs.prep / name);
  }
  m.write(dirs.prep / "manifest.json");
  spdlog::info("prep: {} documents, {} passages, vocabulary {}", docs.size(), corpus.store.size(), corpus.vocab.size());
  return m;
}

Manifest run_pretrain(const ExperimentConfig& config, const StepObserver& observer) {
  config.validate();
  const StageDirs dirs(config.workdir);
  const auto corpus = load_prepared(dirs);
  const auto candidates = load_candidates(dirs, corpus.vocab);
  const auto model_config = resolve_model_config(config, corpus.vocab.size());

  fs::create_directories(dirs.pretrain);
  LossLog log(dirs.pretrain / "losses.tsv", config.log_every, observer);
  const auto model = pretrain_model(config, model_config, corpus.store, candidates, log.observer());
  log.close();
  save_checkpoint(model, dirs.pretrain / "full.ckpt", true);
  save_checkpoint(model, dirs.pretrain / "model.ckpt", false);

  auto m = start_manifest(config, "pretrain");
  m.settings = {{"objective", std::string(to_string(config.pretrain.objective))},
                {"context", std::string(to_string(config.pretrain.context))},
                {"steps", std::to_string(config.pretrain.steps)},
                {"parameters", std::to_string(model.parameter_count())}};
  for (const char* name : {"vocab.txt", "passages.jsonl", "queries.jsonl"}) add_stage_input(m, dirs, dirs.prep / name);
  for (const char* name : {"model.ckpt", "full.ckpt", "losses.tsv"}) m.add_output(dirs.pretrain / name);
  m.write(dirs.pretrain / "manifest.json");
  return m;
}

Manifest run_finetune(const ExperimentConfig& config, int stage, const StepObserver& observer) {
  config.validate();
  const StageDirs dirs(config.workdir);
  const auto& out_dir = dirs.finetune(stage);
  const auto corpus = load_prepared(dirs);
  const auto model_config = resolve_model_config(config, corpus.vocab.size());
  const auto train = training_queries(config, corpus);
  const auto& ft = config.finetune;

  auto m = start_manifest(config, "finetune" + std::to_string(stage));
  m.settings = {{"init", std::string(to_string(ft.init))},
                {"steps", std::to_string(ft.steps)},
                {"negatives", std::to_string(ft.negatives)},
                {"negative_depth", std::to_string(ft.negative_depth)},
                {"queries", std::to_string(train.size())}};

  Model<float> init = initial_encoder(config, model_config);
  if (ft.init == FinetuneInit::pretrained) {
    const auto path = dirs.pretrain / "model.ckpt";
    require_file(path, "pre-trained checkpoint (run pretrain first or set finetune.init = random)");
    init = load_model(path, model_config);
    add_stage_input(m, dirs, path);
  }
  m.add_input(ft.train_queries);
  m.add_input(ft.train_qrels);
  for (const char* name : {"vocab.txt", "passages.jsonl", "bm25.idx"}) add_stage_input(m, dirs, dirs.prep / name);

  fs::create_directories(out_dir);
  NegativePools pools;
  if (stage == 1) {
    pools = bm25_negative_pools(corpus, train, ft.negative_depth, config.bm25);
  } else {
    const auto r1_path = dirs.finetune1 / "model.ckpt";
    require_file(r1_path, "retriever-1 checkpoint (run finetune --stage 1 first)");
    require_file(dirs.finetune1 / "manifest.json", "retriever-1 manifest");
    add_stage_input(m, dirs, r1_path);
    const auto retriever1 = load_model(r1_path, model_config);
    std::size_t widest = 0;
    for (const auto& q : train) widest = std::max(widest, q.positives.size());
    const auto run = retrieve(retriever1, corpus.store, train, ft.negative_depth + widest, config.encode_batch_size);
    write_run(out_dir / "retriever1_train.trec", run, "retriever1");
    for (const auto& q : train) {
      std::vector<RankedCandidate> ranked;
      for (const auto& e : run.rankings.at(q.qid)) ranked.push_back({corpus.store.ordinal(e.pid), e.score});
      const std::unordered_set<std::size_t> positives(q.positives.begin(), q.positives.end());
      pools.push_back(negative_pool(ranked, positives, ft.negative_depth, NegativeSource::dense));
    }
    m.add_output(out_dir / "retriever1_train.trec");
  }
  write_pools(out_dir / "negatives.jsonl", train, pools, corpus.store);

  const auto phase = "finetune" + std::to_string(stage);
  LossLog log(out_dir / "losses.tsv", config.log_every, observer);
  const auto model =
      finetune_retriever(ft, init, corpus.store, train, pools, stream_seed(config.seed, phase), phase, log.observer());
  log.close();
  save_checkpoint(model, out_dir / "model.ckpt", false);
  for (const char* name : {"negatives.jsonl", "model.ckpt", "losses.tsv"}) m.add_output(out_dir / name);
  m.write(out_dir / "manifest.json");
  return m;
}

Manifest run_encode(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& output) {
  config.validate();
  const StageDirs dirs(config.workdir);
  const auto corpus = load_prepared(dirs);
  require_file(checkpoint, "checkpoint");
  const auto model = load_checkpoint<float>(checkpoint);
  const auto matrix = encode_corpus(model, corpus.store, config.encode_batch_size);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  matrix.save(output);

  auto m = start_manifest(config, "encode");
  m.settings = {{"rows", std::to_string(matrix.rows())}, {"dim", std::to_string(matrix.dim)}};
  add_user_input(m, dirs, checkpoint);
  add_stage_input(m, dirs, dirs.prep / "passages.jsonl");
  m.add_output(output);
  m.write(fs::path(output.string() + ".manifest.json"));
  return m;
}

Manifest run_search(const ExperimentConfig& config, const SearchRequest& request) {
  config.validate();
  if (request.depth == 0) throw ConfigError("search depth must be at least 1");
  const StageDirs dirs(config.workdir);
  const auto corpus = load_prepared(dirs);
  const auto queries = read_query_texts(request.queries, corpus.vocab);
  auto m = start_manifest(config, "search");
  add_user_input(m, dirs, request.queries);
  RankedRun run;
  if (request.engine == SearchEngine::bm25) {
    m.settings = {{"engine", "bm25"}, {"depth", std::to_string(request.depth)}};
    add_stage_input(m, dirs, dirs.prep / "bm25.idx");
    run = retrieve_bm25(corpus, queries, request.depth, config.bm25);
  } else {
    m.settings = {{"engine", "dense"}, {"depth", std::to_string(request.depth)}};
    require_file(request.checkpoint, "checkpoint");
    const auto model = load_checkpoint<float>(request.checkpoint);
    add_user_input(m, dirs, request.checkpoint);
    EmbeddingMatrix matrix;
    if (request.embeddings.empty()) {
      matrix = encode_corpus(model, corpus.store, config.encode_batch_size);
    } else {
      matrix = EmbeddingMatrix::load(request.embeddings);
      if (matrix.rows() != corpus.store.size()) {
        throw DataError("embedding matrix has " + std::to_string(matrix.rows()) + " rows for " +
                        std::to_string(corpus.store.size()) + " passages");
      }
      add_user_input(m, dirs, request.embeddings);
    }
    run = dense_search(matrix, encode_queries(model, queries, config.encode_batch_size), request.depth);
  }
  for (const auto& q : queries) {
    if (!run.rankings.contains(q.qid)) run.rankings[q.qid];
  }
  if (request.output.has_parent_path()) fs::create_directories(request.output.parent_path());
  write_run(request.output, run, request.engine == SearchEngine::bm25 ? "bm25" : "dense");
  m.add_output(request.output);
  m.write(fs::path(request.output.string() + ".manifest.json"));
  return m;
}

std::string EvalReport::to_text() const {
  std::string out;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    out += metrics[i] + "\t" + fixed(values[i].value, 4) + "\t(" + std::to_string(values[i].queries) + " queries)\n";
  }
  return out;
}

std::string EvalReport::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    j[metrics[i]] = {{"value", values[i].value}, {"queries", values[i].queries}};
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(std::string_view text) {
  EvalReport report;
  try {
    const auto j = json::parse(text);
    for (const auto& [name, v] : j.items()) {
      report.metrics.push_back(name);
      report.values.push_back({v.at("value").get<double>(), v.at("queries").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return report;
}

EvalReport run_eval(const fs::path& run_path, const fs::path& qrels_path, std::span<const std::string> metrics) {
  const auto run = read_run(run_path);
  const auto qrels = read_qrels(qrels_path);
  EvalReport report;
  for (const auto& name : metrics) {
    report.metrics.push_back(name);
    report.values.push_back(evaluate_metric(run, qrels, name));
  }
  return report;
}

std::string AblationTable::to_markdown() const {
  std::string out = "| " + sweep +
                    " | R1 MRR@10 | R1 R@50 | R1 R@1k | R2 MRR@10 | R2 R@50 | R2 R@1k |\n"
                    "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.label;
    for (const auto* s : {&r.retriever1, &r.retriever2}) {
      out += " | " + fixed(100.0 * s->mrr10, 1) + " | " + fixed(100.0 * s->recall50, 1) + " | " +
             fixed(100.0 * s->recall1000, 1);
    }
    out += " |\n";
  }
  return out;
}

std::string AblationTable::to_json() const {
  json rows_json = json::array();
  auto scores = [](const RetrievalScores& s) {
    return json{{"mrr@10", s.mrr10}, {"recall@50", s.recall50}, {"recall@1000", s.recall1000}};
  };
  for (const auto& r : rows) {
    rows_json.push_back({{"value", r.label}, {"retriever1", scores(r.retriever1)}, {"retriever2", scores(r.retriever2)}});
  }
  return json{{"sweep", sweep}, {"rows", rows_json}}.dump(2) + "\n";
}

AblationTable run_ablation(const ExperimentConfig& config, std::string_view sweep,
                           std::span<const std::string> values, const StepObserver& observer) {
  config.validate();
  if (values.empty()) throw ConfigError("ablation sweep needs at least one value");
  if (config.corpus.input.empty()) throw ConfigError("corpus.input: a corpus file is required");
  if (config.eval.queries.empty() || config.eval.qrels.empty()) {
    throw ConfigError("eval.queries and eval.qrels: both are required for an ablation");
  }
  const auto docs = read_documents(config.corpus.input);
  const auto corpus = prepare_corpus(config, docs);
  const auto train = training_queries(config, corpus);
  const auto test = read_labeled_queries(config.eval.queries, config.eval.qrels, corpus.vocab, corpus.store);

  AblationTable table{std::string(sweep), {}};
  for (const auto& value : values) {
    auto point = config;
    point.set(std::string(sweep) + "=" + value);
    point.validate();
    spdlog::info("ablation: {} = {}", sweep, value);
    const auto candidates = provide_queries(point, corpus);
    const auto outcome = run_experiment(point, corpus, candidates, train, test, observer);
    table.rows.push_back({value, outcome.retriever1, outcome.retriever2});
  }
  return table;
}

void write_synthetic_task(const ExperimentConfig& config, const SyntheticCorpusSpec& spec,
                          std::size_t train_queries, std::size_t test_queries, const fs::path& directory) {
  const auto synthetic = make_synthetic_corpus(spec);
  fs::create_directories(directory);
  write_documents(directory / "corpus.jsonl", synthetic.documents);
  const auto corpus = prepare_corpus(config, synthetic.documents);
  const auto [train, test] =
      make_labeled_queries(corpus, train_queries, test_queries, stream_seed(spec.seed, "labels"));
  write_labeled_queries(directory / "train.tsv", directory / "train.qrels", train, corpus);
  write_labeled_queries(directory / "test.tsv", directory / "test.qrels", test, corpus);
}

void run_train_generator(const ExperimentConfig& config, const GeneratorTraining& training, const fs::path& output) {
  config.validate();
  if (config.corpus.input.empty()) throw ConfigError("corpus.input: a corpus file is required");
  const auto docs = read_documents(config.corpus.input);
  const auto corpus = prepare_corpus(config, docs);
  const auto candidates = lexical_queries(corpus, config.queries.count, stream_seed(config.seed, "generator-queries"));
  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < corpus.store.size(); ++i) {
    const auto& p = corpus.store[i];
    const auto& set = candidates.at(p.key());
    for (std::size_t j = 0; j < set.queries.size(); ++j) {
      pairs.push_back({PairKind::passage_query, p.doc_id, p.passage_index, i, j, p.tokens, set.queries[j]});
    }
  }
  const auto model_config = resolve_model_config(config, corpus.vocab.size());
  Model<float> model(model_config, ModelParts{false, true}, stream_seed(config.seed, "generator"));
  train_generator(model, pairs, training);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  save_checkpoint(model, output, true);
}

}  // namespace qac
