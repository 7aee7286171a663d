// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qac {

enum class ErrorKind {
  config,
  data,
  dimension,
  index,
  contract,
  length,
  load,
  dependency,
  numeric,
  io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::index: return "index";
    case ErrorKind::contract: return "contract";
    case ErrorKind::length: return "length";
    case ErrorKind::load: return "load";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Base of every error thrown by the library. The kind is what the CLI prints
/// as the error category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class KindedError : public Error {
 public:
  explicit KindedError(const std::string& what) : Error(K, what) {}
};

using ConfigError = KindedError<ErrorKind::config>;
using DataError = KindedError<ErrorKind::data>;
using DimensionError = KindedError<ErrorKind::dimension>;
using IndexError = KindedError<ErrorKind::index>;
using ContractError = KindedError<ErrorKind::contract>;
using LengthError = KindedError<ErrorKind::length>;
using LoadError = KindedError<ErrorKind::load>;
using DependencyError = KindedError<ErrorKind::dependency>;
using NumericError = KindedError<ErrorKind::numeric>;
using IoError = KindedError<ErrorKind::io>;

}  // namespace qac
