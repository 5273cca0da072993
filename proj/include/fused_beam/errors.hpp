#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fused_beam {

// Malformed input file or record.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;

  FormatError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what) {}
};

// Read/write failure, including truncated payloads.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition (bad config, mismatched sizes, invalid state ids).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace fused_beam
