#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moesteer {

// Base class for all toolkit errors. CLI maps these to exit code 1.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input that could not be interpreted at all. Carries the
// 1-based line number when the source is a line-delimited file.
class parse_error : public error {
 public:
  explicit parse_error(const std::string& what, std::size_t line = 0)
      : error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a documented invariant or contract.
class validation_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

}  // namespace moesteer
