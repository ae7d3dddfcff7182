#pragma once

#include <stdexcept>
#include <string>

namespace amor {

/// Process exit codes used by the command-line front-end.
enum class ExitCode : int {
  Success = 0,
  ConfigError = 2,
  NumericalFailure = 3,
  IoError = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::NumericalFailure; }
  virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid configuration or precondition violation on user-facing inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::ConfigError; }
  const char* kind() const noexcept override { return "config"; }
};

/// Non-convergence or a degenerate numerical problem.
class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::NumericalFailure; }
  const char* kind() const noexcept override { return "numerical"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::IoError; }
  const char* kind() const noexcept override { return "io"; }
};

}  // namespace amor
