// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "qac/error.hpp"

namespace qac {

namespace {

void check_inputs(const RankedRun& run, const QrelSet& qrels, std::size_t k) {
  if (k == 0) throw ConfigError("metric cutoff k must be at least 1");
  if (run.rankings.empty()) throw DataError("run is empty");
  for (const auto& [qid, entries] : run.rankings) {
    if (!qrels.judgments.contains(qid)) spdlog::warn("query {} has no judgments; skipped", qid);
  }
}

int grade(const std::map<std::string, int>& judged, const std::string& pid) {
  auto it = judged.find(pid);
  return it == judged.end() ? 0 : it->second;
}

const std::vector<RunEntry>* ranking_for(const RankedRun& run, std::string_view qid) {
  auto it = run.rankings.find(qid);
  return it == run.rankings.end() ? nullptr : &it->second;
}

template <typename PerQuery>
MetricValue average(const RankedRun& run, const QrelSet& qrels, PerQuery&& per_query, const char* metric) {
  MetricValue out;
  double total = 0.0;
  std::size_t excluded = 0;
  for (const auto& [qid, judged] : qrels.judgments) {
    double value = 0.0;
    if (!per_query(judged, ranking_for(run, qid), value)) {
      ++excluded;
      continue;
    }
    total += value;
    ++out.queries;
  }
  if (excluded > 0) spdlog::warn("{}: {} queries without relevant judgments excluded", metric, excluded);
  out.value = out.queries == 0 ? 0.0 : total / double(out.queries);
  return out;
}

std::size_t count_relevant(const std::map<std::string, int>& judged) {
  return static_cast<std::size_t>(std::count_if(judged.begin(), judged.end(), [](const auto& j) { return j.second > 0; }));
}

std::vector<std::string> fields(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string f; in >> f;) out.push_back(std::move(f));
  return out;
}

template <typename N>
N parse_number(const std::string& text, const std::string& where, const char* what) {
  N value{};
  if constexpr (std::is_floating_point_v<N>) {
    try {
      std::size_t used = 0;
      value = static_cast<N>(std::stod(text, &used));
      if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw DataError(where + ": bad " + what + " '" + text + "'");
    }
  } else {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) throw DataError(where + ": bad " + what + " '" + text + "'");
  }
  return value;
}

}  // namespace

void QrelSet::add(const std::string& qid, const std::string& pid, int relevance) {
  if (relevance < 0) throw DataError("negative relevance for " + qid + " " + pid);
  if (!judgments[qid].emplace(pid, relevance).second) throw DataError("duplicate judgment for " + qid + " " + pid);
}

std::size_t QrelSet::relevant_count(std::string_view qid) const {
  auto it = judgments.find(qid);
  return it == judgments.end() ? 0 : count_relevant(it->second);
}

void RankedRun::add(const std::string& qid, std::vector<RunEntry> entries) {
  auto& list = rankings[qid];
  std::set<std::string> seen;
  for (const auto& e : list) seen.insert(e.pid);
  for (auto& e : entries) {
    if (!seen.insert(e.pid).second) throw DataError("passage " + e.pid + " ranked twice for query " + qid);
    list.push_back(std::move(e));
  }
}

QrelSet read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open qrels " + path.string());
  QrelSet qrels;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto f = fields(line);
    if (f.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(n);
    if (f.size() != 4) throw DataError(where + ": expected 'qid 0 pid rel'");
    try {
      qrels.add(f[0], f[2], parse_number<int>(f[3], where, "relevance"));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const QrelSet& qrels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [qid, judged] : qrels.judgments) {
    for (const auto& [pid, rel] : judged) out << qid << " 0 " << pid << ' ' << rel << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

RankedRun read_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run " + path.string());
  struct Row {
    std::size_t rank;
    RunEntry entry;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto f = fields(line);
    if (f.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(n);
    if (f.size() != 6) throw DataError(where + ": expected 'qid Q0 pid rank score tag'");
    const auto rank = parse_number<std::size_t>(f[3], where, "rank");
    if (rank == 0) throw DataError(where + ": ranks are 1-based");
    rows[f[0]].push_back({rank, {f[2], parse_number<double>(f[4], where, "score")}});
  }
  RankedRun run;
  for (auto& [qid, list] : rows) {
    std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    std::vector<RunEntry> entries;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].rank == list[i - 1].rank) {
        throw DataError(path.string() + ": query " + qid + " repeats rank " + std::to_string(list[i].rank));
      }
      entries.push_back(std::move(list[i].entry));
    }
    run.add(qid, std::move(entries));
  }
  return run;
}

void write_run(const std::filesystem::path& path, const RankedRun& run, std::string_view tag) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(9);
  for (const auto& [qid, entries] : run.rankings) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out << qid << " Q0 " << entries[i].pid << ' ' << i + 1 << ' ' << entries[i].score << ' ' << tag << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

MetricValue mrr_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k) {
  check_inputs(run, qrels, k);
  return average(
      run, qrels,
      [&](const std::map<std::string, int>& judged, const std::vector<RunEntry>* ranking, double& value) {
        if (count_relevant(judged) == 0) return false;
        value = 0.0;
        if (ranking == nullptr) return true;
        for (std::size_t r = 0; r < ranking->size() && r < k; ++r) {
          if (grade(judged, (*ranking)[r].pid) > 0) {
            value = 1.0 / double(r + 1);
            break;
          }
        }
        return true;
      },
      "mrr");
}

MetricValue recall_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k) {
  check_inputs(run, qrels, k);
  return average(
      run, qrels,
      [&](const std::map<std::string, int>& judged, const std::vector<RunEntry>* ranking, double& value) {
        const auto relevant = count_relevant(judged);
        if (relevant == 0) return false;
        std::size_t found = 0;
        if (ranking != nullptr) {
          for (std::size_t r = 0; r < ranking->size() && r < k; ++r) {
            if (grade(judged, (*ranking)[r].pid) > 0) ++found;
          }
        }
        value = double(found) / double(relevant);
        return true;
      },
      "recall");
}

MetricValue ndcg_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k) {
  check_inputs(run, qrels, k);
  return average(
      run, qrels,
      [&](const std::map<std::string, int>& judged, const std::vector<RunEntry>* ranking, double& value) {
        std::vector<int> grades;
        for (const auto& [pid, rel] : judged) grades.push_back(rel);
        std::sort(grades.begin(), grades.end(), std::greater<>());
        double ideal = 0.0;
        for (std::size_t r = 0; r < grades.size() && r < k; ++r) {
          ideal += (std::exp2(grades[r]) - 1.0) / std::log2(double(r) + 2.0);
        }
        if (ideal <= 0.0) return false;
        double dcg = 0.0;
        if (ranking != nullptr) {
          for (std::size_t r = 0; r < ranking->size() && r < k; ++r) {
            dcg += (std::exp2(grade(judged, (*ranking)[r].pid)) - 1.0) / std::log2(double(r) + 2.0);
          }
        }
        value = dcg / ideal;
        return true;
      },
      "ndcg");
}

MetricValue evaluate_metric(const RankedRun& run, const QrelSet& qrels, std::string_view name) {
  const auto at = name.find('@');
  if (at == std::string_view::npos) throw ConfigError("metric '" + std::string(name) + "' lacks an @k cutoff");
  const auto metric = name.substr(0, at);
  const auto cutoff = std::string(name.substr(at + 1));
  std::size_t k = 0;
  auto [ptr, ec] = std::from_chars(cutoff.data(), cutoff.data() + cutoff.size(), k);
  if (ec != std::errc() || ptr != cutoff.data() + cutoff.size()) {
    throw ConfigError("metric '" + std::string(name) + "' has a bad cutoff");
  }
  if (metric == "mrr") return mrr_at_k(run, qrels, k);
  if (metric == "recall") return recall_at_k(run, qrels, k);
  if (metric == "ndcg") return ndcg_at_k(run, qrels, k);
  throw ConfigError("unknown metric '" + std::string(metric) + "'");
}

AnnotationSheet read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation sheet " + path.string());
  AnnotationSheet sheet;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (fields(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(n);
    AnnotationRecord rec;
    try {
      const auto r = nlohmann::json::parse(line);
      rec.pair_id = r.at("pair_id").is_string() ? r.at("pair_id").get<std::string>() : r.at("pair_id").dump();
      const auto kind = r.at("kind").get<std::string>();
      if (kind == "passage-passage") {
        rec.kind = PairKind::passage_passage;
      } else if (kind == "passage-query") {
        rec.kind = PairKind::passage_query;
      } else {
        throw DataError(where + ": unknown pair kind '" + kind + "'");
      }
      rec.votes = r.at("votes").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (rec.votes.size() != 3) {
      throw DataError(where + ": pair " + rec.pair_id + " has " + std::to_string(rec.votes.size()) +
                      " votes, expected 3");
    }
    for (int v : rec.votes) {
      if (v != 0 && v != 1) throw DataError(where + ": votes must be 0 or 1");
    }
    if (!seen.insert(rec.pair_id).second) throw DataError(where + ": duplicate pair_id " + rec.pair_id);
    sheet.records.push_back(std::move(rec));
  }
  return sheet;
}

std::size_t annotation_count(const AnnotationSheet& sheet, PairKind kind) {
  return static_cast<std::size_t>(
      std::count_if(sheet.records.begin(), sheet.records.end(), [&](const auto& r) { return r.kind == kind; }));
}

double correlation_rate(const AnnotationSheet& sheet, PairKind kind) {
  std::size_t total = 0, high = 0;
  for (const auto& r : sheet.records) {
    if (r.kind != kind) continue;
    if (r.votes.size() != 3) {
      throw DataError("pair " + r.pair_id + " has " + std::to_string(r.votes.size()) + " votes, expected 3");
    }
    int yes = 0;
    for (int v : r.votes) {
      if (v != 0 && v != 1) throw DataError("pair " + r.pair_id + " has a vote other than 0 or 1");
      yes += v;
    }
    ++total;
    if (yes >= 2) ++high;
  }
  if (total == 0) throw DataError("no " + std::string(to_string(kind)) + " pairs in the annotation sheet");
  return double(high) / double(total);
}

}  // namespace qac
