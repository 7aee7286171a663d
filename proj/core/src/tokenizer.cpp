// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "qac/error.hpp"

namespace qac {

namespace {

constexpr std::string_view kSpecials[] = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kCls, Vocabulary::kSep,
                                          Vocabulary::kMask};

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

bool no_space_before(std::string_view w) {
  static constexpr std::string_view kClosing[] = {",", ".", "!", "?", ";", ":", ")", "]", "}", "%", "'"};
  return std::find(std::begin(kClosing), std::end(kClosing), w) != std::end(kClosing);
}

bool no_space_after(std::string_view w) { return w == "(" || w == "[" || w == "{" || w == "$"; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      const auto special = std::find_if(std::begin(kSpecials), std::end(kSpecials),
                                        [&](std::string_view s) { return text.substr(i, s.size()) == s; });
      if (special != std::end(kSpecials)) {
        if (!current.empty()) out.push_back(std::move(current)), current.clear();
        out.emplace_back(*special);
        i += special->size() - 1;
        continue;
      }
    }
    if (is_word_byte(c)) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
      continue;
    }
    if (!current.empty()) out.push_back(std::move(current)), current.clear();
    if (!std::isspace(c) && !std::iscntrl(c)) out.emplace_back(1, static_cast<char>(c));
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  bool glue = true;
  for (const auto& w : words) {
    if (!glue && !no_space_before(w)) out.push_back(' ');
    out += w;
    glue = no_space_after(w);
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (auto w : {kPad, kUnk, kCls, kSep, kMask}) add(std::string(w));
}

void Vocabulary::add(std::string word) {
  const auto id = static_cast<TokenId>(words_.size());
  index_.emplace(word, id);
  words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t min_frequency, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts) {
    if (n >= std::max<std::size_t>(min_frequency, 1)) ranked.emplace_back(w, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [w, n] : ranked) {
    if (max_size != 0 && vocab.size() >= max_size) break;
    if (vocab.contains(w)) continue;
    vocab.add(w);
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no <= static_cast<std::size_t>(vocab.special_.first_regular)) {
      if (line != vocab.words_[line_no - 1]) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected special token " +
                        vocab.words_[line_no - 1]);
      }
      continue;
    }
    if (line.empty() || vocab.contains(line)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty or duplicate vocabulary entry");
    }
    vocab.add(line);
  }
  if (line_no < static_cast<std::size_t>(vocab.special_.first_regular)) {
    throw DataError(path.string() + ": vocabulary is missing special tokens");
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& w : words_) out << w << '\n';
  if (!out) throw IoError("failed writing vocabulary " + path.string());
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? special_.unk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::words(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (id == special_.pad) continue;
    out.push_back(word(id));
  }
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  const auto w = words(ids);
  return join_words(w);
}

}  // namespace qac
