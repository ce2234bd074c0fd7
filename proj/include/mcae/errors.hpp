#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcae {

// Bad sizes, incompatible shapes, invalid option values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. backprop from a non-scalar node.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Labels or features that violate a data contract.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content. `offset` is a byte offset for binary formats and a
// 1-based line number for text formats.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Training produced a non-finite loss component.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mcae
