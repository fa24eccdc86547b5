#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace provtrace {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input parses but is missing required fields.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Input contradicts itself (e.g. a node changes type mid-stream).
class IntegrityError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// A precondition of an operation does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical optimization produced NaN/Inf.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was invoked before the stage that produces its input.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace provtrace
