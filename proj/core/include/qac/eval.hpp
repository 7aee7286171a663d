// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qac/corpus.hpp"

namespace qac {

/// qid -> pid -> graded relevance (>= 0).
struct QrelSet {
  std::map<std::string, std::map<std::string, int>, std::less<>> judgments;

  /// Throws DataError on a duplicate (qid, pid) or negative grade.
  void add(const std::string& qid, const std::string& pid, int relevance);
  std::size_t relevant_count(std::string_view qid) const;
};

struct RunEntry {
  std::string pid;
  double score = 0.0;
};

/// qid -> entries in rank order (rank 1 first). Producers emit descending
/// score with ties broken by ascending passage ordinal; readers keep the
/// file's rank order.
struct RankedRun {
  std::map<std::string, std::vector<RunEntry>, std::less<>> rankings;

  /// Throws DataError when pid already appears for qid.
  void add(const std::string& qid, std::vector<RunEntry> entries);
};

/// TREC qrels: "qid 0 pid rel" per line.
QrelSet read_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const QrelSet& qrels);

/// TREC run: "qid Q0 pid rank score tag" per line, rank 1-based.
RankedRun read_run(const std::filesystem::path& path);
void write_run(const std::filesystem::path& path, const RankedRun& run, std::string_view tag);

/// Per-metric outcome: the mean and how many queries it averaged.
struct MetricValue {
  double value = 0.0;
  std::size_t queries = 0;
};

// Metrics average over the qrels queries with at least one relevant passage
// (positive ideal DCG for NDCG). Such queries missing from the run count as 0.
// Run queries without judgments are skipped with a warning. An empty run is a
// DataError; k = 0 is a ConfigError.
MetricValue mrr_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k = 10);
MetricValue recall_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k);
MetricValue ndcg_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k = 10);

/// Parses "mrr@10", "recall@50", "ndcg@10" and evaluates it.
MetricValue evaluate_metric(const RankedRun& run, const QrelSet& qrels, std::string_view name);

struct AnnotationRecord {
  std::string pair_id;
  PairKind kind = PairKind::passage_passage;
  std::vector<int> votes;  // 1 = high correlation
};

struct AnnotationSheet {
  std::vector<AnnotationRecord> records;
};

/// JSON lines {pair_id, kind, votes:[0|1,0|1,0|1]}; kind is "passage-passage"
/// or "passage-query". Throws DataError on anything else.
AnnotationSheet read_annotations(const std::filesystem::path& path);

/// Fraction of pairs of the given kind whose majority vote is high. Every
/// record must carry exactly three 0/1 votes.
double correlation_rate(const AnnotationSheet& sheet, PairKind kind);
std::size_t annotation_count(const AnnotationSheet& sheet, PairKind kind);

}  // namespace qac
