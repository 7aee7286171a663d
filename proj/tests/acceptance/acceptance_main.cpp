// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   qac_acceptance [--only N]... [--seeds N] [--set section.key=value]... [--verbose]
//
// --set and --seeds only affect the directional experiment (criterion 9).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "qac/config.hpp"
#include "qac/corpus.hpp"
#include "qac/dense.hpp"
#include "qac/eval.hpp"
#include "qac/model.hpp"
#include "qac/objectives.hpp"
#include "qac/pipeline.hpp"
#include "qac/querygen.hpp"
#include "qac/sparse.hpp"
#include "qac/stages.hpp"
#include "qac/synthetic.hpp"
#include "qac/tensor.hpp"
#include "qac/tokenizer.hpp"

#ifndef QAC_FIXTURE_DIR
#define QAC_FIXTURE_DIR "tests/fixtures"
#endif

namespace fs = std::filesystem;
using qac::Tensor;
using qac::testing::gradcheck;
using qac::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

struct GradCase {
  std::string name;
  std::function<Tensor<double>()> loss;
  std::vector<Tensor<double>> inputs;
  double tolerance;
  std::size_t sample = 0;
};

// Contracts a tensor with fixed random weights so every output element gets a
// distinct upstream gradient.
Tensor<double> probe(const Tensor<double>& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(t.shape(), rng, 1.0, false);
  return qac::sum(qac::mul(t, w));
}

qac::ModelConfig tiny_model_config() {
  qac::ModelConfig c;
  c.vocab_size = 23;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.encoder_layers = 2;
  c.tap_layer = 1;
  c.decoder_layers = 1;
  c.ffn_dim = 12;
  c.max_seq_len = 145;
  return c;
}

std::vector<qac::TokenSequence> tiny_sequences(std::mt19937_64& rng, std::size_t count, const qac::ModelConfig& c) {
  std::uniform_int_distribution<qac::TokenId> word(c.special.first_regular, static_cast<int>(c.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> len(3, 7);
  std::vector<qac::TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    qac::TokenSequence s{c.special.cls};
    const auto n = len(rng);
    for (std::size_t j = 0; j < n; ++j) s.push_back(word(rng));
    out.push_back(std::move(s));
  }
  return out;
}

// Masks at a high rate and guarantees at least one masked position per sequence.
qac::MaskedBatch tiny_masked(std::span<const qac::TokenSequence> seqs, double rate, std::mt19937_64& rng,
                             const qac::ModelConfig& c) {
  qac::MaskingSpec spec;
  spec.mask_rate = rate;
  auto batch = qac::mask_batch(seqs, spec, c.special, c.vocab_size, rng);
  for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
    auto& s = batch.sequences[i];
    if (!s.positions.empty()) continue;
    s.positions.push_back(1);
    s.targets.push_back(seqs[i][1]);
    s.tokens[1] = c.special.mask;
  }
  return batch;
}

Outcome criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::vector<GradCase> cases;
  constexpr double kOp = 1e-4;
  constexpr double kComposite = 1e-3;

  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    cases.push_back({"add", [=] { return probe(qac::add(a, b), 11); }, {a, b}, kOp});
    cases.push_back({"sub", [=] { return probe(qac::sub(a, b), 12); }, {a, b}, kOp});
    cases.push_back({"mul", [=] { return probe(qac::mul(a, b), 13); }, {a, b}, kOp});
    cases.push_back({"scale", [=] { return probe(qac::scale(a, 0.37), 14); }, {a}, kOp});
    auto bias = random_tensor({4}, rng);
    cases.push_back({"add_bias", [=] { return probe(qac::add_bias(a, bias), 15); }, {a, bias}, kOp});
    auto m = random_tensor({4, 5}, rng), n = random_tensor({5, 4}, rng);
    cases.push_back({"matmul", [=] { return probe(qac::matmul(a, m), 16); }, {a, m}, kOp});
    cases.push_back({"matmul_nt", [=] { return probe(qac::matmul_nt(a, n), 17); }, {a, n}, kOp});
    cases.push_back({"gelu", [=] { return probe(qac::gelu(a), 18); }, {a}, kOp});
    cases.push_back({"tanh", [=] { return probe(qac::tanh(a), 19); }, {a}, kOp});
    auto gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
    cases.push_back({"layer_norm", [=] { return probe(qac::layer_norm(a, gamma, beta), 20); }, {a, gamma, beta}, kOp});
    cases.push_back({"softmax_rows", [=] { return probe(qac::softmax_rows(a), 21); }, {a}, kOp});
    const std::vector<std::int32_t> targets{2, 0, 3};
    const std::vector<std::size_t> rows{0, 2, 1};
    cases.push_back({"cross_entropy", [=] { return qac::cross_entropy(a, targets, rows); }, {a}, kOp});
    auto table = random_tensor({6, 4}, rng);
    const std::vector<std::int32_t> ids{5, 0, 5, 2};
    cases.push_back({"gather_rows", [=] { return probe(qac::gather_rows(table, ids), 22); }, {table}, kOp});
    const std::vector<std::uint8_t> take{1, 0, 1};
    cases.push_back({"where_rows", [=] { return probe(qac::where_rows(take, a, b), 23); }, {a, b}, kOp});
    cases.push_back({"sum", [=] { return qac::sum(qac::mul(a, a)); }, {a}, kOp});
    cases.push_back({"mean", [=] { return qac::mean(qac::mul(a, b)); }, {a, b}, kOp});
    // Two sequences of length 4 with 4 heads over d = 8; the second is padded.
    auto q = random_tensor({8, 8}, rng), k = random_tensor({8, 8}, rng), v = random_tensor({8, 8}, rng);
    const std::vector<std::uint8_t> keys{1, 1, 1, 1, 1, 1, 0, 0};
    cases.push_back({"attention", [=] { return probe(qac::attention(q, k, v, 2, 4, 4, keys), 24); }, {q, k, v}, kOp});
  }

  const auto cfg = tiny_model_config();
  auto params_of = [](const auto& model) {
    std::vector<Tensor<double>> ps;
    for (const auto& p : model.parameters()) {
      if (p.requires_grad()) ps.push_back(p);
    }
    return ps;
  };
  {
    qac::Model<double> model(cfg, {}, 3);
    auto seqs = tiny_sequences(rng, 3, cfg);
    const auto batch = tiny_masked(seqs, 0.4, rng, cfg);
    cases.push_back({"mlm loss",
                     [=] {
                       const auto packed = batch.pack(cfg.special.pad);
                       const auto states = model.encode(packed);
                       return qac::mlm_loss_from_hidden(model, states.layers.back(), batch, packed.seq);
                     },
                     params_of(model), kComposite});
  }
  {
    qac::Model<double> model(cfg, {true, false}, 4);
    auto xs = tiny_sequences(rng, 3, cfg), ys = tiny_sequences(rng, 3, cfg);
    const auto x = tiny_masked(xs, 0.4, rng, cfg), y = tiny_masked(ys, 0.4, rng, cfg);
    cases.push_back({"coCondenser total loss", [=] { return qac::cocondenser_total_loss(model, x, y, 1.0).total; },
                     params_of(model), kComposite});
  }
  {
    qac::Model<double> model(cfg, {false, true}, 5);
    auto xs = tiny_sequences(rng, 3, cfg), ys = tiny_sequences(rng, 3, cfg);
    const auto x = tiny_masked(xs, 0.3, rng, cfg), y = tiny_masked(ys, 0.45, rng, cfg);
    cases.push_back({"CoT-MAE total loss", [=] { return qac::cotmae_total_loss(model, x, y).total; },
                     params_of(model), kComposite});
  }
  {
    qac::Model<double> model(cfg, {}, 6);
    auto seqs = tiny_sequences(rng, 5, cfg);
    cases.push_back({"fine-tuning InfoNCE",
                     [=] {
                       std::vector<qac::TokenSequence> head(seqs.begin(), seqs.begin() + 1);
                       std::vector<qac::TokenSequence> tail(seqs.begin() + 1, seqs.end());
                       const auto query = model.encode(qac::TokenBatch::pack(head, 0)).embedding();
                       const auto passages = model.encode(qac::TokenBatch::pack(tail, 0)).embedding();
                       const std::vector<std::int32_t> first{0}, rest{1, 2, 3};
                       return qac::finetune_infonce(query, qac::gather_rows(passages, first),
                                                    qac::gather_rows(passages, rest));
                     },
                     params_of(model), kComposite});
  }

  std::string failures;
  double worst = 0.0;
  for (auto& c : cases) {
    const auto r = gradcheck(c.loss, c.inputs, c.sample);
    worst = std::max(worst, r.relative_error);
    if (!(r.relative_error < c.tolerance)) failures += " " + c.name + "=" + fmt("%.2e", r.relative_error);
  }
  const double elapsed = seconds_since(start);
  Outcome out;
  out.pass = failures.empty() && elapsed < 120.0;
  out.detail = std::to_string(cases.size()) + " checks, worst rel err " + fmt("%.2e", worst) + ", " +
               fmt("%.1fs", elapsed) + (failures.empty() ? "" : ";" + failures);
  return out;
}

// ---------------------------------------------------------------------------
// 2. Metric oracle equivalence

Outcome criterion_metrics() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int instance = 0; instance < 100; ++instance) {
    qac::QrelSet qrels;
    qac::RankedRun run;
    qac::oracle::Judgments judgments;
    qac::oracle::Ranking ranking;
    const int queries = std::uniform_int_distribution<int>(1, 12)(rng);
    const int pool = std::uniform_int_distribution<int>(5, 1500)(rng);
    std::uniform_int_distribution<int> pid(0, pool - 1);
    for (int q = 0; q < queries; ++q) {
      const auto qid = "q" + std::to_string(q);
      // Some queries are judged only, some ranked only, most both.
      const int kind = std::uniform_int_distribution<int>(0, 9)(rng);
      if (kind != 0) {
        const int judged = std::uniform_int_distribution<int>(1, 6)(rng);
        std::set<int> seen;
        for (int j = 0; j < judged; ++j) {
          const int p = pid(rng);
          if (!seen.insert(p).second) continue;
          const int grade = std::uniform_int_distribution<int>(0, 3)(rng);
          qrels.add(qid, "p" + std::to_string(p), grade);
          judgments[qid]["p" + std::to_string(p)] = grade;
        }
      }
      if (kind != 1) {
        std::vector<int> order(static_cast<std::size_t>(pool));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(std::min<std::size_t>(order.size(), std::uniform_int_distribution<std::size_t>(1, 1200)(rng)));
        std::vector<qac::RunEntry> entries;
        for (std::size_t r = 0; r < order.size(); ++r) {
          const auto p = "p" + std::to_string(order[r]);
          entries.push_back({p, -static_cast<double>(r)});
          ranking[qid].push_back(p);
        }
        run.add(qid, std::move(entries));
      }
    }
    if (run.rankings.empty() || qac::oracle::judged_queries(judgments).empty()) continue;
    const double pairs[][2] = {
        {qac::mrr_at_k(run, qrels, 10).value, qac::oracle::mrr(ranking, judgments, 10)},
        {qac::recall_at_k(run, qrels, 50).value, qac::oracle::recall(ranking, judgments, 50)},
        {qac::recall_at_k(run, qrels, 1000).value, qac::oracle::recall(ranking, judgments, 1000)},
        {qac::ndcg_at_k(run, qrels, 10).value, qac::oracle::ndcg(ranking, judgments, 10)},
    };
    for (const auto& p : pairs) worst = std::max(worst, std::abs(p[0] - p[1]));
  }

  // Worked example: binary relevance, relevant documents at ranks 1 and 3.
  qac::QrelSet qrels;
  qrels.add("q", "a", 1);
  qrels.add("q", "c", 1);
  qac::RankedRun run;
  run.add("q", {{"a", 3.0}, {"b", 2.0}, {"c", 1.0}});
  const double worked = qac::ndcg_at_k(run, qrels, 10).value;
  const double expected = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));

  Outcome out;
  out.pass = worst <= 1e-9 && std::abs(worked - expected) <= 1e-9 && std::abs(worked - 0.9197) < 5e-5;
  out.detail = "100 instances, max |diff| " + fmt("%.1e", worst) + ", worked NDCG@10 " + fmt("%.4f", worked);
  return out;
}

// ---------------------------------------------------------------------------
// 3. Closed-form losses

Outcome criterion_closed_forms() {
  constexpr std::size_t kVocab = 997;
  qac::MaskedBatch batch;
  batch.sequences.push_back({{2, 4, 9, 4}, {1, 3}, {17, 33}});
  batch.sequences.push_back({{2, 4, 8}, {1}, {996}});
  const std::size_t seq = 4;
  const auto logits = Tensor<double>::full({2 * seq, kVocab}, 0.25);
  const double mlm = qac::mlm_loss(logits, batch, seq).item();

  const auto anchors = Tensor<double>::full({4, 6}, 0.5);
  const auto contexts = Tensor<double>::full({4, 6}, -0.2);
  const double contrastive = qac::contrastive_loss(anchors, contexts, 1.0).item();

  const auto query = Tensor<double>::full({1, 6}, 0.3);
  const auto positive = Tensor<double>::full({1, 6}, 0.7);
  const auto negatives = Tensor<double>::full({15, 6}, 0.7);
  const double infonce = qac::finetune_infonce(query, positive, negatives).item();

  const double e1 = std::abs(mlm - std::log(double(kVocab)));
  const double e2 = std::abs(contrastive - std::log(4.0));
  const double e3 = std::abs(infonce - std::log(16.0));
  Outcome out;
  out.pass = e1 < 1e-4 && e2 < 1e-6 && e3 < 1e-6;
  out.detail = "MLM " + fmt("%.6f", mlm) + " vs ln(997); contrastive " + fmt("%.6f", contrastive) +
               " vs ln 4; InfoNCE " + fmt("%.6f", infonce) + " vs ln 16";
  return out;
}

// ---------------------------------------------------------------------------
// 4. Corpus invariants

std::vector<qac::Document> random_documents(std::size_t count, std::mt19937_64& rng) {
  std::vector<std::string> words;
  for (int i = 0; i < 3000; ++i) words.push_back("w" + std::to_string(i));
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> sentences(1, 30);
  // Mostly ordinary sentences, some very long ones without any terminator.
  std::discrete_distribution<int> length_class({6, 3, 1});
  const char* enders[] = {".", "!", "?", ","};
  std::vector<qac::Document> docs;
  for (std::size_t d = 0; d < count; ++d) {
    std::string text;
    const int n = sentences(rng);
    for (int s = 0; s < n; ++s) {
      const int cls = length_class(rng);
      const int len = cls == 0 ? std::uniform_int_distribution<int>(1, 30)(rng)
                      : cls == 1 ? std::uniform_int_distribution<int>(31, 140)(rng)
                                 : std::uniform_int_distribution<int>(141, 400)(rng);
      std::string sentence = "W" + words[pick(rng)];
      for (int w = 1; w < len; ++w) {
        sentence += " " + words[pick(rng)];
        if (rng() % 17 == 0) sentence += ",";
      }
      text += sentence + enders[rng() % 4] + " ";
    }
    docs.push_back({"doc" + std::to_string(d), text});
  }
  return docs;
}

Outcome criterion_corpus() {
  std::mt19937_64 rng(4);
  // Passage lengths.
  const auto docs = random_documents(1000, rng);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  const auto vocab = qac::Vocabulary::build(texts);
  const auto store = qac::PassageStore::from_documents(docs, vocab);
  std::size_t over = 0, longest = 0;
  for (const auto& p : store.passages()) {
    longest = std::max(longest, p.tokens.size());
    over += p.tokens.size() > qac::kMaxPassageTokens ? 1 : 0;
  }

  // Masking rate over 10,000 eligible positions.
  qac::SpecialTokens special;
  qac::MaskingSpec spec;
  spec.mask_rate = 0.30;
  std::uniform_int_distribution<qac::TokenId> word(special.first_regular, 999);
  std::size_t positions = 0, masked = 0;
  for (int s = 0; s < 100; ++s) {
    qac::TokenSequence seq{special.cls};
    for (int i = 0; i < 100; ++i) seq.push_back(word(rng));
    positions += 100;
    masked += qac::apply_masking(seq, spec, special, 1000, rng).positions.size();
  }
  const double rate = double(masked) / double(positions);
  const double sigma = std::sqrt(0.3 * 0.7 / double(positions));
  const bool rate_ok = std::abs(rate - 0.30) <= 3.0 * sigma;

  // Candidate selection over many epochs of query pairs.
  std::vector<qac::Passage> passages;
  for (std::size_t i = 0; i < 200; ++i) passages.push_back({"d" + std::to_string(i), 0, {5, 6, 7}});
  const qac::PassageStore small(passages);
  std::string selection;
  bool uniform_ok = true;
  for (std::size_t c : {1, 5, 10, 20}) {
    qac::QueryMap queries;
    for (const auto& p : small.passages()) {
      qac::CandidateQuerySet set{p.doc_id, 0, {}};
      for (std::size_t j = 0; j < c; ++j) set.queries.push_back({static_cast<qac::TokenId>(100 + j)});
      queries.emplace(set.key(), set);
    }
    std::vector<double> counts(c, 0.0);
    std::mt19937_64 pair_rng(1000 + c);
    double draws = 0.0;
    for (int epoch = 0; epoch < 100; ++epoch) {
      for (const auto& pair : qac::make_query_pairs(small, queries, pair_rng)) {
        counts.at(pair.y_source) += 1.0;
        draws += 1.0;
      }
    }
    const double p = 1.0 / double(c);
    const double bound = 3.0 * std::sqrt(draws * p * (1.0 - p));
    double dev = 0.0;
    for (double n : counts) dev = std::max(dev, std::abs(n - draws * p));
    uniform_ok = uniform_ok && dev <= bound;
    selection += " C=" + std::to_string(c) + ":" + fmt("%.0f", dev) + "/" + fmt("%.0f", bound);
  }

  Outcome out;
  out.pass = over == 0 && !store.empty() && rate_ok && uniform_ok;
  out.detail = std::to_string(store.size()) + " passages, longest " + std::to_string(longest) + ", " +
               std::to_string(over) + " over 144; mask rate " + fmt("%.4f", rate) + " (3 sigma " +
               fmt("%.4f", 3 * sigma) + "); max count deviation vs 3 sigma" + selection;
  return out;
}

// ---------------------------------------------------------------------------
// 5. Nucleus sampling

Outcome criterion_nucleus() {
  const std::vector<double> dist{0.5, 0.3, 0.15, 0.05};
  qac::SamplingSpec spec;
  spec.top_p = 0.7;
  std::mt19937_64 rng(5);
  std::vector<double> counts(dist.size(), 0.0);
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) counts.at(qac::nucleus_sample(dist, spec, rng)) += 1.0;
  const double expect[] = {0.625, 0.375};
  bool ok = counts[2] == 0.0 && counts[3] == 0.0 && counts[0] > 0.0 && counts[1] > 0.0;
  for (int i = 0; i < 2; ++i) {
    const double sigma = std::sqrt(kDraws * expect[i] * (1.0 - expect[i]));
    ok = ok && std::abs(counts[i] - kDraws * expect[i]) <= 3.0 * sigma;
  }
  Outcome out;
  out.pass = ok;
  out.detail = "frequencies [" + fmt("%.4f", counts[0] / kDraws) + ", " + fmt("%.4f", counts[1] / kDraws) + ", " +
               fmt("%.4f", counts[2] / kDraws) + ", " + fmt("%.4f", counts[3] / kDraws) + "]";
  return out;
}

// ---------------------------------------------------------------------------
// 6. BM25

Outcome criterion_bm25() {
  const qac::Bm25Params params;  // k1 = 0.9, b = 0.4
  const std::vector<qac::TokenSequence> one{{7, 8, 9}};
  const auto single = qac::InvertedIndex::build(one);
  const std::vector<qac::TokenId> term{8};
  const double hand = std::log(1.0 + 0.5 / 1.5);  // tf = 1 and dl = avgdl make the tf factor exactly 1
  const double got = qac::bm25_score(single, term, 0, params);
  const auto hit = qac::bm25_search(single, term, 1, params);
  bool ok = std::abs(got - hand) < 1e-6 && std::abs(got - 0.2877) < 1e-4 && hit.size() == 1 &&
            std::abs(hit[0].score - got) < 1e-12;

  std::mt19937_64 rng(6);
  std::vector<qac::TokenSequence> docs;
  std::vector<std::vector<int>> raw;
  // Zipf-ish term distribution so document frequencies vary widely.
  std::vector<double> weights;
  for (int t = 0; t < 400; ++t) weights.push_back(1.0 / (t + 1.0));
  std::discrete_distribution<int> term_dist(weights.begin(), weights.end());
  for (int d = 0; d < 1000; ++d) {
    const int len = std::uniform_int_distribution<int>(1, 60)(rng);
    qac::TokenSequence doc;
    for (int i = 0; i < len; ++i) doc.push_back(term_dist(rng) + 5);
    raw.emplace_back(doc.begin(), doc.end());
    docs.push_back(std::move(doc));
  }
  const auto index = qac::InvertedIndex::build(docs);
  std::size_t mismatches = 0;
  double worst = 0.0;
  for (int q = 0; q < 200; ++q) {
    const int len = std::uniform_int_distribution<int>(1, 6)(rng);
    qac::TokenSequence query;
    for (int i = 0; i < len; ++i) query.push_back(term_dist(rng) + 5);
    const std::size_t k = q % 2 == 0 ? 10 : 1000;
    const auto got_k = qac::bm25_search(index, query, k, params);
    const auto want = qac::oracle::bm25_topk(raw, std::vector<int>(query.begin(), query.end()), k, 0.9, 0.4);
    if (got_k.size() != want.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, std::abs(got_k[i].score - want[i].second));
      // Rank order must agree exactly unless the two scores are a float-level tie.
      if (got_k[i].ordinal != want[i].first && std::abs(got_k[i].score - want[i].second) > 1e-9) ++mismatches;
    }
  }
  ok = ok && mismatches == 0 && worst < 1e-9;
  Outcome out;
  out.pass = ok;
  out.detail = "single-doc score " + fmt("%.6f", got) + "; 200 queries on 1000 docs, " + std::to_string(mismatches) +
               " rank mismatches, max score diff " + fmt("%.1e", worst);
  return out;
}

// ---------------------------------------------------------------------------
// 7. Dense search

Outcome criterion_dense() {
  std::mt19937_64 rng(7);
  constexpr std::size_t kRows = 1000, kDim = 64;
  std::size_t mismatches = 0, ties = 0;
  for (int trial = 0; trial < 3; ++trial) {
    qac::EmbeddingMatrix corpus{kDim, {}, {}};
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::uniform_int_distribution<int> small(-2, 2);
    for (std::size_t i = 0; i < kRows; ++i) {
      corpus.ids.push_back("p" + std::to_string(i));
      for (std::size_t j = 0; j < kDim; ++j) {
        // Trial 0 is continuous; the others use small integers so many scores tie exactly.
        corpus.values.push_back(trial == 0 ? normal(rng) : static_cast<float>(small(rng)));
      }
    }
    // Exact duplicate rows guarantee ties in every trial.
    for (std::size_t i = 0; i < 50; ++i) {
      const auto src = rng() % kRows, dst = rng() % kRows;
      std::copy_n(corpus.values.begin() + src * kDim, kDim, corpus.values.begin() + dst * kDim);
    }
    qac::EmbeddingMatrix queries{kDim, {}, {}};
    for (std::size_t q = 0; q < 20; ++q) {
      queries.ids.push_back("q" + std::to_string(q));
      for (std::size_t j = 0; j < kDim; ++j) {
        queries.values.push_back(trial == 0 ? normal(rng) : static_cast<float>(small(rng) != 0 ? 1 : 0));
      }
    }
    const auto got = qac::dense_search_ordinals(corpus, queries, 100);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      const std::vector<float> qv(queries.values.begin() + q * kDim, queries.values.begin() + (q + 1) * kDim);
      const auto want = qac::oracle::dot_topk(corpus.values, kRows, qv, kDim, 100);
      for (std::size_t i = 0; i + 1 < want.size(); ++i) ties += want[i].second == want[i + 1].second ? 1 : 0;
      if (got[q].size() != want.size()) {
        ++mismatches;
        continue;
      }
      for (std::size_t i = 0; i < want.size(); ++i) {
        if (got[q][i].ordinal != want[i].first || got[q][i].score != want[i].second) ++mismatches;
      }
    }
  }
  Outcome out;
  out.pass = mismatches == 0 && ties > 0;
  out.detail = "60 queries over 1000x64, " + std::to_string(ties) + " adjacent ties, " + std::to_string(mismatches) +
               " mismatches";
  return out;
}

// ---------------------------------------------------------------------------
// 8. Annotation correlation rates

Outcome criterion_annotations() {
  const auto sheet = qac::read_annotations(fs::path(QAC_FIXTURE_DIR) / "annotations.jsonl");
  const double pp = qac::correlation_rate(sheet, qac::PairKind::passage_passage);
  const double pq = qac::correlation_rate(sheet, qac::PairKind::passage_query);
  const auto npp = qac::annotation_count(sheet, qac::PairKind::passage_passage);
  const auto npq = qac::annotation_count(sheet, qac::PairKind::passage_query);
  Outcome out;
  out.pass = fmt("%.1f", 100 * pp) == "35.5" && fmt("%.1f", 100 * pq) == "56.5" && pp == 71.0 / 200.0 &&
             pq == 113.0 / 200.0;
  out.detail = "passage-passage " + fmt("%.1f%%", 100 * pp) + " of " + std::to_string(npp) + ", passage-query " +
               fmt("%.1f%%", 100 * pq) + " of " + std::to_string(npq);
  return out;
}

// ---------------------------------------------------------------------------
// 9. Directional end-to-end experiment

struct DirectionalPlan {
  qac::ExperimentConfig base;
  qac::SyntheticCorpusSpec corpus;
  std::size_t train_queries = 400;
  std::size_t test_queries = 200;
  std::size_t seeds = 5;
};

DirectionalPlan default_plan() {
  DirectionalPlan plan;
  auto& c = plan.base;
  c.model.hidden_dim = 32;
  c.model.num_heads = 2;
  c.model.encoder_layers = 2;
  c.model.tap_layer = 1;
  c.model.decoder_layers = 1;
  c.model.ffn_dim = 64;
  c.model.max_seq_len = 145;
  c.corpus.max_passage_tokens = 20;
  c.queries.count = 5;
  c.pretrain.objective = qac::Objective::cocondenser;
  c.pretrain.steps = 300;
  c.pretrain.batch_size = 32;
  c.pretrain.learning_rate = 1e-3;
  c.finetune.steps = 100;
  c.finetune.batch_size = 16;
  c.finetune.learning_rate = 1e-3;
  c.finetune.negatives = 15;
  c.finetune.negative_depth = 200;
  c.eval.depth = 1000;
  plan.corpus.num_documents = 400;
  return plan;
}

struct ArmScores {
  std::vector<double> mrr;
  std::vector<qac::RetrievalScores> r1, r2;
  double mean() const { return mrr.empty() ? 0.0 : std::accumulate(mrr.begin(), mrr.end(), 0.0) / double(mrr.size()); }
};

qac::RetrievalScores average(const std::vector<qac::RetrievalScores>& xs) {
  qac::RetrievalScores m;
  for (const auto& x : xs) {
    m.mrr10 += x.mrr10 / double(xs.size());
    m.recall50 += x.recall50 / double(xs.size());
    m.recall1000 += x.recall1000 / double(xs.size());
  }
  return m;
}

Outcome criterion_directional(const DirectionalPlan& plan) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> arms{"random-init", "passage", "query", "mixed"};
  std::map<std::string, ArmScores> scores;
  for (std::size_t s = 1; s <= plan.seeds; ++s) {
    auto config = plan.base;
    config.seed = s;
    auto spec = plan.corpus;
    spec.seed = s;
    const auto synthetic = qac::make_synthetic_corpus(spec);
    const auto corpus = qac::prepare_corpus(config, synthetic.documents);
    const auto [train, test] = qac::make_labeled_queries(corpus, plan.train_queries, plan.test_queries,
                                                         qac::stream_seed(s, "labels"));
    const auto candidates = qac::provide_queries(config, corpus);
    std::string line = "  seed " + std::to_string(s) + ":";
    for (const auto& arm : arms) {
      auto point = config;
      if (arm == "random-init") {
        point.finetune.init = qac::FinetuneInit::random;
      } else {
        point.set("pretrain", "context", arm);
      }
      const auto outcome = qac::run_experiment(point, corpus, candidates, train, test);
      auto& a = scores[arm];
      a.mrr.push_back(outcome.retriever2.mrr10);
      a.r1.push_back(outcome.retriever1);
      a.r2.push_back(outcome.retriever2);
      line += " " + arm + "=" + fmt("%.4f", outcome.retriever2.mrr10);
    }
    std::printf("%s (%.0fs)\n", line.c_str(), seconds_since(start));
    std::fflush(stdout);
  }

  qac::AblationTable table{"pretrain.context", {}};
  for (const auto& arm : arms) {
    table.rows.push_back({arm, average(scores[arm].r1), average(scores[arm].r2)});
  }
  std::printf("  mean over %zu seeds (mixed-context sweep included):\n%s", plan.seeds, table.to_markdown().c_str());

  const double elapsed = seconds_since(start);
  const double q = scores["query"].mean(), r = scores["random-init"].mean(), p = scores["passage"].mean();
  Outcome out;
  out.pass = q > r && q > p && elapsed < 900.0;
  out.detail = "mean R2 MRR@10 query " + fmt("%.4f", q) + " vs random-init " + fmt("%.4f", r) + " vs passage " +
               fmt("%.4f", p) + "; mixed " + fmt("%.4f", scores["mixed"].mean()) + " (reported); " +
               fmt("%.0fs", elapsed);
  return out;
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[fs::relative(entry.path(), dir).generic_string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

void run_all_stages(qac::ExperimentConfig config, const fs::path& workdir, const fs::path& task) {
  config.workdir = workdir.string();
  fs::remove_all(workdir);
  qac::run_prep(config);
  qac::run_pretrain(config);
  qac::run_finetune(config, 1);
  qac::run_finetune(config, 2);
  const qac::StageDirs dirs(workdir);
  qac::run_encode(config, dirs.finetune2 / "model.ckpt", workdir / "encode" / "passages.emb");
  qac::SearchRequest dense;
  dense.engine = qac::SearchEngine::dense;
  dense.queries = task / "test.tsv";
  dense.output = workdir / "search" / "dense.trec";
  dense.checkpoint = dirs.finetune2 / "model.ckpt";
  dense.embeddings = workdir / "encode" / "passages.emb";
  dense.depth = 100;
  qac::run_search(config, dense);
  qac::SearchRequest sparse;
  sparse.engine = qac::SearchEngine::bm25;
  sparse.queries = task / "test.tsv";
  sparse.output = workdir / "search" / "bm25.trec";
  sparse.depth = 100;
  qac::run_search(config, sparse);
}

Outcome criterion_reproducibility(const fs::path& scratch) {
  const fs::path task = scratch / "task";
  auto config = default_plan().base;
  config.pretrain.steps = 20;
  config.pretrain.batch_size = 16;
  config.finetune.steps = 10;
  config.finetune.batch_size = 8;
  config.finetune.negatives = 3;
  config.corpus.input = (task / "corpus.jsonl").string();
  config.finetune.train_queries = (task / "train.tsv").string();
  config.finetune.train_qrels = (task / "train.qrels").string();
  config.eval.queries = (task / "test.tsv").string();
  config.eval.qrels = (task / "test.qrels").string();
  qac::SyntheticCorpusSpec spec;
  spec.num_documents = 60;
  qac::write_synthetic_task(config, spec, 40, 20, task);

  std::string detail;
  bool ok = true;
  for (auto objective : {"cocondenser", "cotmae"}) {
    config.set("pretrain", "objective", objective);
    run_all_stages(config, scratch / "a", task);
    run_all_stages(config, scratch / "b", task);
    const auto a = snapshot(scratch / "a");
    const auto b = snapshot(scratch / "b");
    std::size_t manifests = 0, checkpoints = 0, differing = 0;
    for (const auto& [name, bytes] : a) {
      auto it = b.find(name);
      if (it == b.end() || it->second != bytes) {
        ++differing;
        detail += " differs:" + name;
      }
      manifests += name.ends_with("manifest.json") ? 1 : 0;
      checkpoints += name.ends_with(".ckpt") ? 1 : 0;
    }
    ok = ok && differing == 0 && a.size() == b.size() && manifests >= 6 && checkpoints >= 4;
    detail += std::string(" ") + objective + ": " + std::to_string(a.size()) + " files (" + std::to_string(manifests) +
              " manifests, " + std::to_string(checkpoints) + " checkpoints) identical=" +
              (differing == 0 && a.size() == b.size() ? "yes" : "no") + ";";
  }
  Outcome out;
  out.pass = ok;
  out.detail = detail;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  qac::tune_allocator();
  CLI::App app{"qac acceptance suite"};
  std::vector<int> only;
  std::vector<std::string> overrides;
  std::size_t seeds = 5;
  bool verbose = false;
  app.add_option("--only", only, "Run only these criteria (1-10)");
  app.add_option("--set", overrides, "Override a key of the directional experiment config");
  app.add_option("--seeds", seeds, "Seeds for the directional experiment");
  app.add_flag("--verbose", verbose, "Show pipeline logs");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::err);

  auto plan = default_plan();
  plan.seeds = seeds;
  for (const auto& o : overrides) plan.base.set(o);

  const fs::path scratch = fs::temp_directory_path() / ("qac-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(scratch);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", criterion_gradients},
      {"metric oracle equivalence", criterion_metrics},
      {"closed-form losses", criterion_closed_forms},
      {"corpus invariants", criterion_corpus},
      {"nucleus sampling", criterion_nucleus},
      {"BM25 correctness", criterion_bm25},
      {"dense search exactness", criterion_dense},
      {"annotation correlation rates", criterion_annotations},
      {"directional end-to-end", [&] { return criterion_directional(plan); }},
      {"reproducibility", [&] { return criterion_reproducibility(scratch); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    failed += outcome.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s\n", outcome.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return failed == 0 ? 0 : 1;
}
