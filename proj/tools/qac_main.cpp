// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

// qac: command line driver for corpus preparation, pre-training,
// fine-tuning, retrieval and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "qac/config.hpp"
#include "qac/error.hpp"
#include "qac/eval.hpp"
#include "qac/stages.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "INI config file (defaults when omitted)");
    cmd->add_option("--set", overrides, "Override a key: section.key=value")->take_all();
  }

  qac::ExperimentConfig load() const {
    auto config = path.empty() ? qac::ExperimentConfig{} : qac::load_config(path);
    for (const auto& o : overrides) config.set(o);
    config.validate();
    return config;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw qac::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw qac::IoError("failed writing " + path.string());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

std::string sweep_key(const std::string& name) {
  if (name == "count" || name == "C") return "queries.count";
  if (name == "context") return "pretrain.context";
  return name;
}

}  // namespace

int main(int argc, char** argv) {
  qac::tune_allocator();
  CLI::App app{"qac - query-as-context pre-training for dense passage retrieval"};
  app.require_subcommand(0, 1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  bool dump_config = false;
  ConfigOptions top;
  app.add_flag("--dump-config", dump_config, "Print every config key with its value and exit");
  top.attach(&app);

  ConfigOptions synth_cfg, prep_cfg, pretrain_cfg, finetune_cfg, encode_cfg, search_cfg, ablate_cfg, gen_cfg;

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with training and test queries");
  synth_cfg.attach(synth);
  std::string synth_out;
  qac::SyntheticCorpusSpec synth_spec;
  std::size_t synth_train = 400, synth_test = 200;
  synth->add_option("-o,--output", synth_out, "Output directory")->required();
  synth->add_option("--documents", synth_spec.num_documents, "Number of documents");
  synth->add_option("--topics", synth_spec.num_topics, "Number of topics");
  synth->add_option("--train-queries", synth_train, "Labeled training queries");
  synth->add_option("--test-queries", synth_test, "Labeled test queries");
  synth->add_option("--seed", synth_spec.seed, "Corpus seed");

  auto* prep = app.add_subcommand("prep", "Split the corpus, build the vocabulary, index and candidate queries");
  prep_cfg.attach(prep);

  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the encoder");
  pretrain_cfg.attach(pretrain);

  auto* finetune = app.add_subcommand("finetune", "Fine-tune a bi-encoder retriever");
  finetune_cfg.attach(finetune);
  int stage = 1;
  finetune->add_option("--stage", stage, "1 (BM25 negatives) or 2 (retriever-1 negatives)")
      ->required()
      ->check(CLI::IsMember({1, 2}));

  auto* encode = app.add_subcommand("encode", "Encode every passage into an embedding matrix");
  encode_cfg.attach(encode);
  std::string encode_ckpt, encode_out;
  encode->add_option("--checkpoint", encode_ckpt, "Encoder checkpoint")->required();
  encode->add_option("-o,--output", encode_out, "Embedding matrix file")->required();

  auto* search = app.add_subcommand("search", "Retrieve passages for a query file");
  search_cfg.attach(search);
  qac::SearchRequest request;
  std::string engine = "dense";
  search->add_option("--engine", engine, "bm25 or dense")->check(CLI::IsMember({"bm25", "dense"}));
  search->add_option("--queries", request.queries, "Queries, one 'qid<TAB>text' per line")->required();
  search->add_option("-o,--output", request.output, "TREC run file")->required();
  search->add_option("--checkpoint", request.checkpoint, "Encoder checkpoint (dense)");
  search->add_option("--embeddings", request.embeddings, "Precomputed passage embeddings (dense)");
  search->add_option("--depth", request.depth, "Results per query");

  auto* eval = app.add_subcommand("eval", "Score a TREC run against qrels");
  std::string run_path, qrels_path, metrics = "mrr@10,recall@50,recall@1000", report_json;
  eval->add_option("--run", run_path, "TREC run file")->required();
  eval->add_option("--qrels", qrels_path, "TREC qrels file")->required();
  eval->add_option("--metrics", metrics, "Comma separated, e.g. mrr@10,recall@50,ndcg@10");
  eval->add_option("--json", report_json, "Also write the report as JSON");

  auto* ablate = app.add_subcommand("ablate", "Run the pipeline per sweep value and tabulate the results");
  ablate_cfg.attach(ablate);
  std::string sweep = "count", values = "1,5,10,20", table_out, table_json;
  ablate->add_option("--sweep", sweep, "count, context, or any section.key");
  ablate->add_option("--values", values, "Comma separated sweep values");
  ablate->add_option("-o,--output", table_out, "Write the markdown table here");
  ablate->add_option("--json", table_json, "Also write the table as JSON");

  auto* stats = app.add_subcommand("annotate-stats", "Correlation rates of an annotation sheet");
  std::string sheet_path;
  stats->add_option("sheet", sheet_path, "Annotation JSON lines")->required();

  auto* gen = app.add_subcommand("train-generator", "Train the toy query generator");
  gen_cfg.attach(gen);
  qac::GeneratorTraining gen_settings;
  std::string gen_out;
  gen->add_option("-o,--output", gen_out, "Generator checkpoint")->required();
  gen->add_option("--steps", gen_settings.steps, "Training steps");
  gen->add_option("--batch-size", gen_settings.batch_size, "Examples per step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    if (dump_config) {
      std::cout << top.load().dump();
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 0;
    }

    if (*synth) {
      const auto config = synth_cfg.load();
      qac::write_synthetic_task(config, synth_spec, synth_train, synth_test, synth_out);
      std::cout << "wrote " << synth_out << "/{corpus.jsonl,train.tsv,train.qrels,test.tsv,test.qrels}\n";
    } else if (*prep) {
      qac::run_prep(prep_cfg.load());
    } else if (*pretrain) {
      qac::run_pretrain(pretrain_cfg.load());
    } else if (*finetune) {
      qac::run_finetune(finetune_cfg.load(), stage);
    } else if (*encode) {
      qac::run_encode(encode_cfg.load(), encode_ckpt, encode_out);
    } else if (*search) {
      request.engine = engine == "bm25" ? qac::SearchEngine::bm25 : qac::SearchEngine::dense;
      if (request.engine == qac::SearchEngine::dense && request.checkpoint.empty()) {
        throw qac::ConfigError("search --engine dense needs --checkpoint");
      }
      qac::run_search(search_cfg.load(), request);
    } else if (*eval) {
      const auto list = split_list(metrics);
      const auto report = qac::run_eval(run_path, qrels_path, list);
      std::cout << report.to_text();
      if (!report_json.empty()) write_text(report_json, report.to_json());
    } else if (*ablate) {
      const auto table = qac::run_ablation(ablate_cfg.load(), sweep_key(sweep), split_list(values));
      std::cout << table.to_markdown();
      if (!table_out.empty()) write_text(table_out, table.to_markdown());
      if (!table_json.empty()) write_text(table_json, table.to_json());
    } else if (*stats) {
      const auto sheet = qac::read_annotations(sheet_path);
      for (auto kind : {qac::PairKind::passage_passage, qac::PairKind::passage_query}) {
        const auto n = qac::annotation_count(sheet, kind);
        if (n == 0) continue;
        std::printf("%s\t%zu pairs\t%.1f%%\n", std::string(qac::to_string(kind)).c_str(), n,
                    100.0 * qac::correlation_rate(sheet, kind));
      }
    } else if (*gen) {
      qac::run_train_generator(gen_cfg.load(), gen_settings, gen_out);
    }
  } catch (const qac::Error& e) {
    std::cerr << "error [" << qac::to_string(e.kind()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
