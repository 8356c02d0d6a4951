#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dilnet {

// Bad call arguments: shape mismatches, invalid ranges, kernel larger than
// input, and similar precondition violations.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad data content: out-of-range labels, incompatible sample shapes.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file, reported with the byte offset where parsing failed.
struct FormatError : DataError {
  FormatError(const std::string& what, std::size_t byte_offset)
      : DataError(what + " (at byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// API misuse: e.g. backward() without a forward cache.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace dilnet
