#pragma once

#include <stdexcept>
#include <string>

namespace lipdd {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration; `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed input file. Carries the 1-based row (or record) number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0)
      : Error(row == 0 ? what : "row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t epoch)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace lipdd
