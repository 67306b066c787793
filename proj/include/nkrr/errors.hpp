#pragma once

#include <stdexcept>
#include <string>

namespace nkrr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (bad β, p > n, unknown option, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument shapes or ranges that violate an operation's precondition.
class ArgumentError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Factorization breakdown, solver failure or non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class DataErrorCode {
  io_failure,
  parse_failure,
  missing_value,
  non_numeric,
  too_few_rows,
};

inline const char* to_string(DataErrorCode code) {
  switch (code) {
    case DataErrorCode::io_failure: return "io_failure";
    case DataErrorCode::parse_failure: return "parse_failure";
    case DataErrorCode::missing_value: return "missing_value";
    case DataErrorCode::non_numeric: return "non_numeric";
    case DataErrorCode::too_few_rows: return "too_few_rows";
  }
  return "unknown";
}

/// Dataset ingestion failure; `code()` tells the cases apart.
class DataError : public Error {
 public:
  DataError(DataErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}
  DataErrorCode code() const noexcept { return code_; }

 private:
  DataErrorCode code_;
};

}  // namespace nkrr
