#pragma once

#include <stdexcept>
#include <string>

namespace alft {

/// Base for every error raised by the library. The CLI maps subclasses
/// onto exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value went NaN/Inf, or a multiplier could not be formed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input (empty question, bad JSON, k out of range, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Configuration and weights disagree, or a config field is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// 0 success, 1 internal/numerical, 2 bad input/config.
inline int exit_code(const Error& e) noexcept {
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const IoError*>(&e)) {
    return 2;
  }
  return 1;
}

}  // namespace alft
