// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>

#include "qac/model.hpp"

namespace qac {

// Checkpoint layout (all integers little-endian):
//
//   magic        8 bytes  "QACCKPT\0"
//   version      u32      kCheckpointVersion
//   value_bytes  u32      4 (float32) or 8 (float64) per stored value
//   field_count  u32
//   fields       field_count x { u32 name_len, name bytes, i64 value }
//   param_count  u32
//   params       param_count x { u32 name_len, name bytes, u32 ndim, ndim x u64 dim, raw values }
//   checksum     u64      FNV-1a over every preceding byte
//
// Fields cover every ModelConfig member plus which heads are stored.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint32_t value_bytes = 0;
  ModelConfig config;
  ModelParts parts;
};

/// Writes the model. include_heads = false drops both auxiliary heads.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path, bool include_heads = true);

/// Reads a checkpoint. Corrupt, truncated or incompatible files throw LoadError.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

/// Like load_checkpoint, but first requires the stored config to equal expected;
/// the LoadError names the first differing field.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace qac
