#pragma once

#include <stdexcept>
#include <string>

namespace supcbm {

/// Raised when input data (documents, blobs, checkpoints) fails validation.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised for caller mistakes: out-of-range options, mismatched shapes.
class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace supcbm
