#pragma once

#include <stdexcept>
#include <string>

namespace hlfusion {

/// Malformed or inconsistent input files: bad magic, version, co-registration
/// disagreement between rasters, checkpoint/config mismatch.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite ones are required (e.g. NaN training loss).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hlfusion
