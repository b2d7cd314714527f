#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedflat {

/// Invalid experiment or component configuration (bad sizes, out-of-range hyper-parameters).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse by the caller (empty inputs, non-scalar backward terminal, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk data. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  [[nodiscard]] std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during an iterative computation.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}

  [[nodiscard]] std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace fedflat
