// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xaln {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape contract violations (dimension mismatches and the like).
struct ShapeError : Error {
  using Error::Error;
};

/// Bad parameter values: rates outside their range, non-finite inputs,
/// non-positive learning rates.
struct ValueError : Error {
  using Error::Error;
};

/// API misuse: empty inputs, fully masked sets, non-scalar loss.
struct UsageError : Error {
  using Error::Error;
};

/// Token id outside the vocabulary.
struct VocabError : Error {
  using Error::Error;
};

/// Malformed data file; carries the byte offset of the first violation.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_ = 0;
};

/// Invalid or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace xaln
