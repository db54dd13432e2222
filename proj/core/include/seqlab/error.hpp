#pragma once

#include <stdexcept>
#include <string>

namespace seqlab {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed configs, out-of-range tokens, bad shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Sequence longer than a model or decoder allows.
class LengthError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite values where finite ones are required, or training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, a second backward without reset,
// an empty hypothesis set, an enumeration over budget.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Filesystem and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqlab
