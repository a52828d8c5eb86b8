#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace motiondiff {

// Invalid configuration values (schedule ranges, odd embedding sizes, bad weights).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an operation's precondition (shape mismatch, step out of range).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed input text. Line and column are 1-based; 0 means unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column = 0)
      : std::runtime_error(format(what, line, column)), line_(line), column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t column) {
    std::string s = "line " + std::to_string(line);
    if (column > 0) s += ", column " + std::to_string(column);
    return s + ": " + what;
  }

  std::size_t line_;
  std::size_t column_;
};

// Data problems that are not text syntax (bad WAV, too-short audio, empty motion).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values inside network evaluation or sampling.
class EvaluationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingFault : public std::runtime_error {
 public:
  TrainingFault(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what + " (batch item " + std::to_string(batch_index) + ")"),
        batch_index_(batch_index) {}

  std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

}  // namespace motiondiff
