// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace mlva {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid or vacuous configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violating a Sample/annotation invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A sequence that must contain at least one step was empty.
class EmptySequenceError : public DataError {
 public:
  using DataError::DataError;
};

/// Malformed file content. Carries the offending 1-based line when known.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long line)
      : DataError(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a failed numerical precondition.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

void log_warning(const std::string& message);

/// Replaces the warning sink (stderr by default). Returns the previous sink.
using WarningSink = std::function<void(const std::string&)>;
WarningSink set_warning_sink(WarningSink sink);

}  // namespace mlva
