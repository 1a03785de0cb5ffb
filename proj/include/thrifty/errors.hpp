#pragma once

#include <stdexcept>
#include <string>

namespace thrifty {

// Invalid architecture, schedule, or operator arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-range input data (labels, dataset files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary container could not be parsed: bad magic, truncation, size mismatch.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss or gradient during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated internal contract (shape mismatch between forward and backward).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace thrifty
