// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "qac/error.hpp"

namespace qac {

namespace {

using nlohmann::json;

const std::set<std::string, std::less<>>& abbreviations() {
  static const std::set<std::string, std::less<>> kAbbreviations = {
      "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co",
      "no", "fig", "approx", "dept", "est", "gen", "gov", "lt", "mt", "sgt", "u.s", "jan", "feb", "mar",
      "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec"};
  return kAbbreviations;
}

bool is_abbreviation(std::string_view text, std::size_t period) {
  std::size_t begin = period;
  while (begin > 0 && !std::isspace(static_cast<unsigned char>(text[begin - 1]))) --begin;
  std::string word;
  for (std::size_t i = begin; i < period; ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalpha(c) || c == '.') word.push_back(static_cast<char>(std::tolower(c)));
  }
  if (word.size() == 1 && std::isupper(static_cast<unsigned char>(text[period - 1]))) return true;  // initial
  return abbreviations().contains(word);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Parses every non-blank line of a JSON-lines file, reporting the line number
// of the first malformed record.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    try {
      fn(record, where);
    } catch (const json::exception& e) {
      throw DataError(where + ": bad record: " + e.what());
    }
  }
}

template <typename T>
std::size_t uniform_index(std::size_t n, T& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

const CandidateQuerySet& candidates_for(const QueryMap& queries, const Passage& p) {
  const auto key = p.key();
  auto it = queries.find(key);
  if (it == queries.end()) throw DataError("no candidate queries for passage " + key);
  if (it->second.queries.empty()) throw DataError("empty candidate query set for passage " + key);
  return it->second;
}

TrainingPair query_pair(const Passage& p, std::size_t ordinal, const CandidateQuerySet& set, std::mt19937_64& rng) {
  const auto pick = uniform_index(set.queries.size(), rng);
  return {PairKind::passage_query, p.doc_id, p.passage_index, ordinal, pick, p.tokens, set.queries[pick]};
}

TrainingPair sibling_pair(const PassageStore& store, const PassageStore::DocumentSpan& doc, std::size_t x,
                          std::size_t y) {
  const auto& px = store[doc.begin + x];
  const auto& py = store[doc.begin + y];
  return {PairKind::passage_passage, px.doc_id, px.passage_index, doc.begin + x, py.passage_index, px.tokens,
          py.tokens};
}

}  // namespace

std::string passage_key(std::string_view doc_id, std::size_t passage_index) {
  return std::string(doc_id) + "#" + std::to_string(passage_index);
}

std::string Passage::key() const { return passage_key(doc_id, passage_index); }

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t end = i + 1;
    while (end < text.size() && std::string_view(".!?\"')]").find(text[end]) != std::string_view::npos) ++end;
    if (end >= text.size() || !std::isspace(static_cast<unsigned char>(text[end]))) continue;
    std::size_t next = end;
    while (next < text.size() && std::isspace(static_cast<unsigned char>(text[next]))) ++next;
    if (next >= text.size()) break;
    const auto n = static_cast<unsigned char>(text[next]);
    const bool opens = std::isupper(n) || std::isdigit(n) || n == '"' || n == '\'' || n == '(';
    if (!opens) continue;
    if (c == '.' && is_abbreviation(text, i)) continue;
    auto sentence = trim(text.substr(start, end - start));
    if (!sentence.empty()) out.push_back(std::move(sentence));
    start = next;
    i = next - 1;
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<Passage> pack_sentences(std::string_view doc_id, std::span<const TokenSequence> sentences,
                                    std::size_t max_tokens) {
  if (max_tokens == 0) throw ConfigError("corpus.max_passage_tokens: must be positive");
  std::vector<Passage> out;
  TokenSequence current;
  auto flush = [&] {
    if (current.empty()) return;
    out.push_back({std::string(doc_id), out.size(), std::move(current)});
    current.clear();
  };
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    if (s.size() > max_tokens) {
      flush();
      current.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(max_tokens));
      flush();
      continue;
    }
    if (current.size() + s.size() > max_tokens) flush();
    current.insert(current.end(), s.begin(), s.end());
  }
  flush();
  return out;
}

std::vector<Passage> split_document(const Document& doc, const Vocabulary& vocab, std::size_t max_tokens) {
  std::vector<TokenSequence> sentences;
  for (const auto& s : split_sentences(doc.text)) sentences.push_back(vocab.encode(s));
  return pack_sentences(doc.doc_id, sentences, max_tokens);
}

PassageStore PassageStore::from_documents(std::span<const Document> docs, const Vocabulary& vocab,
                                          std::size_t max_tokens) {
  std::vector<Passage> all;
  std::set<std::string, std::less<>> seen;
  for (const auto& doc : docs) {
    if (!seen.insert(doc.doc_id).second) throw DataError("duplicate doc_id " + doc.doc_id);
    for (auto& p : split_document(doc, vocab, max_tokens)) all.push_back(std::move(p));
  }
  return PassageStore(std::move(all));
}

PassageStore::PassageStore(std::vector<Passage> passages) : passages_(std::move(passages)) {
  for (std::size_t i = 0; i < passages_.size(); ++i) {
    const auto& p = passages_[i];
    if (documents_.empty() || documents_.back().doc_id != p.doc_id) {
      if (p.passage_index != 0) throw DataError("passage " + p.key() + " does not start its document");
      documents_.push_back({p.doc_id, i, i});
    } else if (p.passage_index != i - documents_.back().begin) {
      throw DataError("passage " + p.key() + " is out of order");
    }
    documents_.back().end = i + 1;
    if (!ordinals_.emplace(p.key(), i).second) throw DataError("duplicate passage " + p.key());
  }
}

std::size_t PassageStore::ordinal(std::string_view key) const {
  auto it = ordinals_.find(key);
  if (it == ordinals_.end()) throw DataError("unknown passage " + std::string(key));
  return it->second;
}

bool PassageStore::contains(std::string_view key) const { return ordinals_.find(key) != ordinals_.end(); }

std::vector<std::string> PassageStore::keys() const {
  std::vector<std::string> out;
  out.reserve(passages_.size());
  for (const auto& p : passages_) out.push_back(p.key());
  return out;
}

void PassageStore::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  for (const auto& p : passages_) {
    out << json{{"doc_id", p.doc_id}, {"passage_index", p.passage_index}, {"tokens", p.tokens}}.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

PassageStore PassageStore::load(const std::filesystem::path& path) {
  std::vector<Passage> passages;
  for_each_json_line(path, [&](const json& r, const std::string&) {
    passages.push_back(
        {r.at("doc_id").get<std::string>(), r.at("passage_index").get<std::size_t>(), r.at("tokens").get<TokenSequence>()});
  });
  return PassageStore(std::move(passages));
}

std::string_view to_string(PairKind kind) {
  return kind == PairKind::passage_passage ? "passage-passage" : "passage-query";
}

std::vector<TrainingPair> make_passage_pairs(const PassageStore& store, std::mt19937_64& rng) {
  std::vector<TrainingPair> out;
  out.reserve(store.documents().size());
  for (const auto& doc : store.documents()) {
    const std::size_t n = doc.end - doc.begin;
    if (n == 1) {
      out.push_back(sibling_pair(store, doc, 0, 0));
      continue;
    }
    const auto x = uniform_index(n, rng);
    auto y = uniform_index(n - 1, rng);
    if (y >= x) ++y;
    out.push_back(sibling_pair(store, doc, x, y));
  }
  return out;
}

std::vector<TrainingPair> make_query_pairs(const PassageStore& store, const QueryMap& queries, std::mt19937_64& rng) {
  std::vector<TrainingPair> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back(query_pair(store[i], i, candidates_for(queries, store[i]), rng));
  return out;
}

std::vector<TrainingPair> make_mixed_pairs(const PassageStore& store, const QueryMap& queries, std::mt19937_64& rng,
                                           double query_probability) {
  if (!(query_probability >= 0.0 && query_probability <= 1.0)) {
    throw ConfigError("pairs.query_probability: must lie in [0,1]");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TrainingPair> out;
  out.reserve(store.size());
  for (const auto& doc : store.documents()) {
    const std::size_t n = doc.end - doc.begin;
    for (std::size_t x = 0; x < n; ++x) {
      const auto& p = store[doc.begin + x];
      if (unit(rng) < query_probability) {
        out.push_back(query_pair(p, doc.begin + x, candidates_for(queries, p), rng));
        continue;
      }
      std::size_t y = x;
      if (n > 1) {
        y = uniform_index(n - 1, rng);
        if (y >= x) ++y;
      }
      out.push_back(sibling_pair(store, doc, x, y));
    }
  }
  return out;
}

std::vector<Document> read_documents(const std::filesystem::path& path) {
  std::vector<Document> docs;
  std::set<std::string, std::less<>> seen;
  for_each_json_line(path, [&](const json& r, const std::string& where) {
    Document d{r.at("doc_id").get<std::string>(), r.at("text").get<std::string>()};
    if (!seen.insert(d.doc_id).second) throw DataError(where + ": duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  });
  return docs;
}

void write_documents(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = open_output(path);
  for (const auto& d : docs) out << json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

QueryMap read_queries(const std::filesystem::path& path, const Vocabulary& vocab) {
  QueryMap out;
  for_each_json_line(path, [&](const json& r, const std::string& where) {
    CandidateQuerySet set{r.at("doc_id").get<std::string>(), r.at("passage_index").get<std::size_t>(), {}};
    for (const auto& q : r.at("queries")) {
      auto tokens = vocab.encode(q.get<std::string>());
      if (tokens.empty()) throw DataError(where + ": empty query for passage " + set.key());
      set.queries.push_back(std::move(tokens));
    }
    if (set.queries.empty()) throw DataError(where + ": no queries for passage " + set.key());
    auto key = set.key();
    if (!out.emplace(key, std::move(set)).second) throw DataError(where + ": duplicate query set for " + key);
  });
  return out;
}

void write_queries(const std::filesystem::path& path, const QueryMap& queries, const Vocabulary& vocab) {
  auto out = open_output(path);
  for (const auto& [key, set] : queries) {
    json texts = json::array();
    for (const auto& q : set.queries) texts.push_back(vocab.decode(q));
    out << json{{"doc_id", set.doc_id}, {"passage_index", set.passage_index}, {"queries", texts}}.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_pairs(const std::filesystem::path& path, std::span<const TrainingPair> pairs, const Vocabulary& vocab) {
  auto out = open_output(path);
  for (const auto& p : pairs) {
    json provenance{{"doc_id", p.doc_id}, {"passage_index", p.x_index}, {"ordinal", p.x_ordinal}};
    provenance[p.kind == PairKind::passage_passage ? "context_passage_index" : "query_index"] = p.y_source;
    out << json{{"kind", to_string(p.kind)},
                {"x_tokens", vocab.words(p.x)},
                {"y_tokens", vocab.words(p.y)},
                {"provenance", provenance}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace qac
