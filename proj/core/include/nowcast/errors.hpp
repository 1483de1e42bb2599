#pragma once

#include <stdexcept>
#include <string>

namespace nowcast {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration that violates a documented rule (model, training, window spec).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The caller used an API incorrectly (non-scalar loss, unknown layer name, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Degenerate, empty or malformed data, including corrupt files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf values or a diverging optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace nowcast
