#pragma once

#include <stdexcept>
#include <string>

namespace rgbx {

// Invalid configuration values, unknown flags, mismatched hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape violations detected before any compute happens.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or malformed dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace rgbx
