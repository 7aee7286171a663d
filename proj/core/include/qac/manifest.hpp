// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace qac {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string name;  // path as configured for inputs, file name for outputs
  std::string sha256;
  bool operator==(const ManifestEntry&) const = default;
};

/// Record of one pipeline stage: what went in, what came out, and under which
/// settings. Holds no timestamps or host data, so identical runs produce
/// byte-identical manifests.
struct Manifest {
  std::string stage;
  std::uint64_t seed = 0;
  std::string config_sha256;
  std::map<std::string, std::string> settings;
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;

  void add_input(const std::filesystem::path& path, std::string name = {});
  void add_output(const std::filesystem::path& path);
  /// Hash of an input or output by name; throws DataError if absent.
  const std::string& hash_of(std::string_view name) const;

  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);
  bool operator==(const Manifest&) const = default;
};

}  // namespace qac
