// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qac/error.hpp"

namespace qac {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed and size fields share a parser");

template <typename E>
struct EnumNames;

template <>
struct EnumNames<Objective> {
  static constexpr std::pair<Objective, std::string_view> values[] = {
      {Objective::mlm, "mlm"}, {Objective::cocondenser, "cocondenser"}, {Objective::cotmae, "cotmae"}};
};
template <>
struct EnumNames<ContextMode> {
  static constexpr std::pair<ContextMode, std::string_view> values[] = {
      {ContextMode::passage, "passage"}, {ContextMode::query, "query"}, {ContextMode::mixed, "mixed"}};
};
template <>
struct EnumNames<QueryProvider> {
  static constexpr std::pair<QueryProvider, std::string_view> values[] = {
      {QueryProvider::lexical, "lexical"}, {QueryProvider::file, "file"}, {QueryProvider::seq2seq, "seq2seq"}};
};
template <>
struct EnumNames<FinetuneInit> {
  static constexpr std::pair<FinetuneInit, std::string_view> values[] = {{FinetuneInit::pretrained, "pretrained"},
                                                                          {FinetuneInit::random, "random"}};
};

template <typename E>
std::string_view enum_name(E v) {
  for (const auto& [value, name] : EnumNames<E>::values) {
    if (value == v) return name;
  }
  return "?";
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& name, std::string_view text, std::string_view expected) {
  throw ConfigError(name + ": '" + std::string(text) + "' is not " + std::string(expected));
}

void parse_value(const std::string& name, std::string_view text, std::size_t& out) {
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || p != text.data() + text.size()) bad_value(name, text, "a non-negative integer");
}
void parse_value(const std::string& name, std::string_view text, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(std::string(text), &used);
    if (used != text.size()) bad_value(name, text, "a number");
  } catch (const std::logic_error&) {
    bad_value(name, text, "a number");
  }
}
void parse_value(const std::string& name, std::string_view text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no") {
    out = false;
  } else {
    bad_value(name, text, "a boolean");
  }
}
void parse_value(const std::string&, std::string_view text, std::string& out) { out = std::string(text); }
void parse_value(const std::string& name, std::string_view text, std::optional<double>& out) {
  if (text == "auto") {
    out.reset();
    return;
  }
  double v = 0.0;
  parse_value(name, text, v);
  out = v;
}
void parse_value(const std::string&, std::string_view text, std::vector<std::string>& out) {
  out.clear();
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    auto item = trim(text.substr(start, comma - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = comma + 1;
  }
}
template <typename E>
  requires std::is_enum_v<E>
void parse_value(const std::string& name, std::string_view text, E& out) {
  std::string expected = "one of";
  for (const auto& [value, label] : EnumNames<E>::values) {
    if (label == text) {
      out = value;
      return;
    }
    expected += " " + std::string(label);
  }
  bad_value(name, text, expected);
}

std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(const std::optional<double>& v) { return v ? format_value(*v) : "auto"; }
std::string format_value(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}
template <typename E>
  requires std::is_enum_v<E>
std::string format_value(E v) {
  return std::string(enum_name(v));
}

struct Field {
  std::string section;
  std::string key;
  bool canonical;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename Access>
Field field(std::string section, std::string key, Access access, bool canonical = true) {
  const auto name = section + "." + key;
  return {section, key, canonical,
          [access](const ExperimentConfig& c) { return format_value(access(const_cast<ExperimentConfig&>(c))); },
          [access, name](ExperimentConfig& c, std::string_view text) { parse_value(name, text, access(c)); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> kFields = {
      field("run", "seed", [](C& c) -> auto& { return c.seed; }),
      field("run", "workdir", [](C& c) -> auto& { return c.workdir; }, false),
      field("run", "log_every", [](C& c) -> auto& { return c.log_every; }, false),
      field("model", "vocab_size", [](C& c) -> auto& { return c.vocab_size_override; }),
      field("model", "hidden_dim", [](C& c) -> auto& { return c.model.hidden_dim; }),
      field("model", "num_heads", [](C& c) -> auto& { return c.model.num_heads; }),
      field("model", "encoder_layers", [](C& c) -> auto& { return c.model.encoder_layers; }),
      field("model", "tap_layer", [](C& c) -> auto& { return c.model.tap_layer; }),
      field("model", "decoder_layers", [](C& c) -> auto& { return c.model.decoder_layers; }),
      field("model", "ffn_dim", [](C& c) -> auto& { return c.model.ffn_dim; }),
      field("model", "max_seq_len", [](C& c) -> auto& { return c.model.max_seq_len; }),
      field("model", "tie_weights", [](C& c) -> auto& { return c.model.tie_weights; }),
      field("corpus", "input", [](C& c) -> auto& { return c.corpus.input; }),
      field("corpus", "max_passage_tokens", [](C& c) -> auto& { return c.corpus.max_passage_tokens; }),
      field("corpus", "min_frequency", [](C& c) -> auto& { return c.corpus.min_frequency; }),
      field("corpus", "max_vocab", [](C& c) -> auto& { return c.corpus.max_vocab; }),
      field("corpus", "stopwords", [](C& c) -> auto& { return c.corpus.stopwords; }),
      field("queries", "provider", [](C& c) -> auto& { return c.queries.provider; }),
      field("queries", "count", [](C& c) -> auto& { return c.queries.count; }),
      field("queries", "file", [](C& c) -> auto& { return c.queries.file; }),
      field("queries", "generator", [](C& c) -> auto& { return c.queries.generator; }),
      field("queries", "max_query_len", [](C& c) -> auto& { return c.queries.sampling.max_query_len; }),
      field("queries", "top_p", [](C& c) -> auto& { return c.queries.sampling.top_p; }),
      field("queries", "top_k", [](C& c) -> auto& { return c.queries.sampling.top_k; }),
      field("pretrain", "objective", [](C& c) -> auto& { return c.pretrain.objective; }),
      field("pretrain", "context", [](C& c) -> auto& { return c.pretrain.context; }),
      field("pretrain", "mix_probability", [](C& c) -> auto& { return c.pretrain.mix_probability; }),
      field("pretrain", "steps", [](C& c) -> auto& { return c.pretrain.steps; }),
      field("pretrain", "batch_size", [](C& c) -> auto& { return c.pretrain.batch_size; }),
      field("pretrain", "learning_rate", [](C& c) -> auto& { return c.pretrain.learning_rate; }),
      field("pretrain", "warmup_ratio", [](C& c) -> auto& { return c.pretrain.warmup_ratio; }),
      field("pretrain", "weight_decay", [](C& c) -> auto& { return c.pretrain.weight_decay; }),
      field("pretrain", "temperature", [](C& c) -> auto& { return c.pretrain.temperature; }),
      field("pretrain", "mask_rate", [](C& c) -> auto& { return c.pretrain.mask_rate; }),
      field("pretrain", "decoder_mask_rate", [](C& c) -> auto& { return c.pretrain.decoder_mask_rate; }),
      field("pretrain", "mask_token_prob", [](C& c) -> auto& { return c.pretrain.mask_token_prob; }),
      field("pretrain", "random_token_prob", [](C& c) -> auto& { return c.pretrain.random_token_prob; }),
      field("pretrain", "keep_prob", [](C& c) -> auto& { return c.pretrain.keep_prob; }),
      field("finetune", "init", [](C& c) -> auto& { return c.finetune.init; }),
      field("finetune", "train_queries", [](C& c) -> auto& { return c.finetune.train_queries; }),
      field("finetune", "train_qrels", [](C& c) -> auto& { return c.finetune.train_qrels; }),
      field("finetune", "steps", [](C& c) -> auto& { return c.finetune.steps; }),
      field("finetune", "batch_size", [](C& c) -> auto& { return c.finetune.batch_size; }),
      field("finetune", "learning_rate", [](C& c) -> auto& { return c.finetune.learning_rate; }),
      field("finetune", "warmup_ratio", [](C& c) -> auto& { return c.finetune.warmup_ratio; }),
      field("finetune", "weight_decay", [](C& c) -> auto& { return c.finetune.weight_decay; }),
      field("finetune", "negatives", [](C& c) -> auto& { return c.finetune.negatives; }),
      field("finetune", "negative_depth", [](C& c) -> auto& { return c.finetune.negative_depth; }),
      field("eval", "queries", [](C& c) -> auto& { return c.eval.queries; }),
      field("eval", "qrels", [](C& c) -> auto& { return c.eval.qrels; }),
      field("eval", "metrics", [](C& c) -> auto& { return c.eval.metrics; }),
      field("eval", "depth", [](C& c) -> auto& { return c.eval.depth; }),
      field("bm25", "k1", [](C& c) -> auto& { return c.bm25.k1; }),
      field("bm25", "b", [](C& c) -> auto& { return c.bm25.b; }),
      field("encode", "batch_size", [](C& c) -> auto& { return c.encode_batch_size; }),
  };
  return kFields;
}

std::string render(const ExperimentConfig& config, bool canonical_only) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (canonical_only && !f.canonical) continue;
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + ("[" + f.section + "]\n");
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string_view to_string(Objective v) { return enum_name(v); }
std::string_view to_string(ContextMode v) { return enum_name(v); }
std::string_view to_string(QueryProvider v) { return enum_name(v); }
std::string_view to_string(FinetuneInit v) { return enum_name(v); }

double PretrainSettings::encoder_mask_rate() const {
  if (mask_rate) return *mask_rate;
  return objective == Objective::cotmae ? 0.30 : 0.15;
}

MaskingSpec PretrainSettings::encoder_masking(std::uint64_t seed) const {
  return {encoder_mask_rate(), mask_token_prob, random_token_prob, keep_prob, seed};
}

MaskingSpec PretrainSettings::decoder_masking(std::uint64_t seed) const {
  return {decoder_mask_rate, mask_token_prob, random_token_prob, keep_prob, seed};
}

void ExperimentConfig::validate() const {
  auto probe = model;
  if (vocab_size_override != 0) probe.vocab_size = vocab_size_override;
  probe.validate();
  check(!workdir.empty(), "run.workdir: must not be empty");
  check(log_every > 0, "run.log_every: must be positive");
  check(corpus.max_passage_tokens > 0 && corpus.max_passage_tokens <= kMaxPassageTokens,
        "corpus.max_passage_tokens: must lie in [1," + std::to_string(kMaxPassageTokens) + "]");
  check(corpus.max_passage_tokens + 1 <= model.max_seq_len,
        "model.max_seq_len: must hold a full passage plus [CLS]");
  check(corpus.min_frequency >= 1, "corpus.min_frequency: must be at least 1");
  check(corpus.stopwords == "none" || corpus.stopwords == "english", "corpus.stopwords: must be none or english");
  check(queries.count >= 1, "queries.count: must be at least 1");
  queries.sampling.validate();
  check(queries.provider != QueryProvider::file || !queries.file.empty(), "queries.file: required by provider=file");
  check(queries.provider != QueryProvider::seq2seq || !queries.generator.empty(),
        "queries.generator: required by provider=seq2seq");
  check(pretrain.mix_probability >= 0.0 && pretrain.mix_probability <= 1.0,
        "pretrain.mix_probability: must lie in [0,1]");
  check(pretrain.batch_size >= 2, "pretrain.batch_size: in-batch negatives need at least 2");
  check(pretrain.learning_rate > 0.0, "pretrain.learning_rate: must be positive");
  check(pretrain.warmup_ratio >= 0.0 && pretrain.warmup_ratio <= 1.0, "pretrain.warmup_ratio: must lie in [0,1]");
  check(pretrain.weight_decay >= 0.0, "pretrain.weight_decay: must be >= 0");
  check(pretrain.temperature > 0.0, "pretrain.temperature: must be positive");
  try {
    pretrain.encoder_masking(seed).validate();
    pretrain.decoder_masking(seed).validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("pretrain.") + e.what());
  }
  check(finetune.batch_size >= 1, "finetune.batch_size: must be positive");
  check(finetune.learning_rate > 0.0, "finetune.learning_rate: must be positive");
  check(finetune.warmup_ratio >= 0.0 && finetune.warmup_ratio <= 1.0, "finetune.warmup_ratio: must lie in [0,1]");
  check(finetune.weight_decay >= 0.0, "finetune.weight_decay: must be >= 0");
  check(finetune.negatives >= 1, "finetune.negatives: at least one negative is required");
  check(finetune.negative_depth >= finetune.negatives, "finetune.negative_depth: must be >= finetune.negatives");
  check(!eval.metrics.empty(), "eval.metrics: must list at least one metric");
  for (const auto& m : eval.metrics) {
    const auto at = m.find('@');
    const auto kind = m.substr(0, at);
    check(at != std::string::npos && (kind == "mrr" || kind == "recall" || kind == "ndcg"),
          "eval.metrics: unknown metric '" + m + "'");
    std::size_t k = 0;
    parse_value("eval.metrics", std::string_view(m).substr(at + 1), k);
    check(k > 0, "eval.metrics: cutoff of '" + m + "' must be positive");
  }
  check(eval.depth >= 1, "eval.depth: must be positive");
  bm25.validate();
  check(encode_batch_size >= 1, "encode.batch_size: must be positive");
}

std::string ExperimentConfig::dump() const { return render(*this, false); }
std::string ExperimentConfig::canonical() const { return render(*this, true); }

void ExperimentConfig::set(std::string_view section, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key " + std::string(section) + "." + std::string(key));
}

void ExperimentConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override '" + std::string(assignment) + "' is not section.key=value");
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
}

ExperimentConfig parse_config(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) config.set(section, key, value.data());
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

ModelConfig resolve_model_config(const ExperimentConfig& config, std::size_t vocabulary_size) {
  auto m = config.model;
  m.vocab_size = config.vocab_size_override != 0 ? config.vocab_size_override : vocabulary_size;
  if (m.vocab_size < vocabulary_size) {
    throw ConfigError("model.vocab_size: " + std::to_string(m.vocab_size) + " is smaller than the vocabulary (" +
                      std::to_string(vocabulary_size) + ")");
  }
  m.validate();
  return m;
}

}  // namespace qac
