#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rscope {

// Root of every error the toolkit raises. The CLI maps ValidationError,
// ConfigError and ContractError to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation's precondition (shapes, empty inputs, ranges).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (non-divisible image size, even kernel, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared during a forward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input archives failed the pre-compute validation pass.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed CSV handed to the plot renderer.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what, std::uint64_t bytes_written = 0)
      : Error(what), bytes_written_(bytes_written) {}
  std::uint64_t bytes_written() const noexcept { return bytes_written_; }

 private:
  std::uint64_t bytes_written_;
};

// Archive does not start with the expected magic bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Archive ended early or carried inconsistent lengths.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::string record)
      : Error(what), record_(std::move(record)) {}
  const std::string& record() const noexcept { return record_; }

 private:
  std::string record_;
};

// Unsupported container version or dtype code.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace rscope
