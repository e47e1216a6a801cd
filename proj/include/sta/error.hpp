#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sta {

/// Incompatible tensor shapes passed to an op. The message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an op (log of a non-positive value, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the recording tape: backward on a non-scalar, or on a tensor whose tape is gone.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed dataset, checkpoint or score file. Carries the 1-based line number when known.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Bad configuration key or value, or a bad command-line combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace sta
