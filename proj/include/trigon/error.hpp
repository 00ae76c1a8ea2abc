#pragma once

#include <stdexcept>
#include <string>

namespace trigon {

/// Raised for invalid arguments and malformed input files.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a computation hits a degenerate configuration (collinear
/// points, empty candidate set, ...).
class DegenerateError : public std::runtime_error {
 public:
  explicit DegenerateError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace trigon
