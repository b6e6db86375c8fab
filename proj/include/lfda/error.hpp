#pragma once

#include <stdexcept>
#include <string>

namespace lfda {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV rows, model files).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

// Structurally valid input that violates the data model (inconsistent grids,
// duplicate cells, version mismatch).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of a function, e.g. a time outside [0,1].
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: singular systems, non-convergence, no variance.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (scenario files, CLI flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; wraps the underlying error with the stage name.
class FitError : public Error {
 public:
  FitError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace lfda
