// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/manifest.hpp"

#include <array>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "qac/error.hpp"

namespace qac {

namespace {

using nlohmann::json;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw IoError("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int n = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &n) != 1) throw IoError("SHA-256 final failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < n; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

json entries_json(const std::vector<ManifestEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) out.push_back({{"name", e.name}, {"sha256", e.sha256}});
  return out;
}

std::vector<ManifestEntry> entries_from(const json& j) {
  std::vector<ManifestEntry> out;
  for (const auto& e : j) out.push_back({e.at("name").get<std::string>(), e.at("sha256").get<std::string>()});
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

void Manifest::add_input(const std::filesystem::path& path, std::string name) {
  inputs.push_back({name.empty() ? path.generic_string() : std::move(name), sha256_file(path)});
}

void Manifest::add_output(const std::filesystem::path& path) {
  outputs.push_back({path.filename().generic_string(), sha256_file(path)});
}

const std::string& Manifest::hash_of(std::string_view name) const {
  for (const auto* list : {&inputs, &outputs}) {
    for (const auto& e : *list) {
      if (e.name == name) return e.sha256;
    }
  }
  throw DataError("manifest of stage " + stage + " has no entry " + std::string(name));
}

std::string Manifest::to_json() const {
  json j{{"stage", stage},
         {"seed", seed},
         {"config_sha256", config_sha256},
         {"settings", settings},
         {"inputs", entries_json(inputs)},
         {"outputs", entries_json(outputs)}};
  return j.dump(2) + "\n";
}

void Manifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json();
  if (!out) throw IoError("failed writing " + path.string());
}

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing manifest " + path.string());
  try {
    const auto j = json::parse(in);
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_sha256 = j.at("config_sha256").get<std::string>();
    m.settings = j.at("settings").get<std::map<std::string, std::string>>();
    m.inputs = entries_from(j.at("inputs"));
    m.outputs = entries_from(j.at("outputs"));
    return m;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace qac
