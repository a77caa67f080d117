#pragma once

#include <stdexcept>
#include <string>

namespace bnf {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  success = 0,
  config = 2,
  data = 3,
  numerical = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::numerical; }
};

// Parameter vectors with non-finite entries or violated constraints.
class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

// Arguments outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Iterative methods that fail to converge. Carries the final residual.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class UnsupportedScoreError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace bnf
