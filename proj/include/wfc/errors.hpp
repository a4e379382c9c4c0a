// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace wfc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that is rejected before any work is done: malformed records, unknown
/// actions, bad configuration. The CLI maps these to exit code 1.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(std::size_t record_index, const std::string& what)
      : InputError("record " + std::to_string(record_index) + ": " + what),
        record_index_(record_index) {}

  std::size_t record_index() const noexcept { return record_index_; }

 private:
  std::size_t record_index_;
};

class ValidationError : public InputError {
 public:
  ValidationError(const std::string& what, std::vector<std::string> offenders)
      : InputError(format(what, offenders)), offenders_(std::move(offenders)) {}
  explicit ValidationError(const std::string& what) : InputError(what) {}

  const std::vector<std::string>& offenders() const noexcept { return offenders_; }

 private:
  static std::string format(const std::string& what, const std::vector<std::string>& offenders) {
    std::string out = what;
    if (!offenders.empty()) {
      out += ":";
      for (const auto& o : offenders) out += " " + o;
    }
    return out;
  }

  std::vector<std::string> offenders_;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

class SerializationError : public Error {
 public:
  using Error::Error;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class ContextOverflowError : public Error {
 public:
  ContextOverflowError(std::size_t length, std::size_t limit)
      : Error("context overflow: prefix of " + std::to_string(length) +
              " tokens reaches the limit of " + std::to_string(limit)),
        length_(length),
        limit_(limit) {}

  std::size_t length() const noexcept { return length_; }
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t length_;
  std::size_t limit_;
};

class FrozenPolicyError : public Error {
 public:
  using Error::Error;
};

class InfiniteKlError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace wfc
