#pragma once

#include <stdexcept>
#include <string>

namespace dadee {

// Bad input: malformed files, shape mismatches, invalid configuration,
// contract violations such as training a frozen bundle. Maps to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// NaN/Inf produced during a computation. Maps to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dadee
