#pragma once

#include <stdexcept>
#include <string>

namespace mkg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the caller was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Graph or dataset content failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (bad prices, unparsable rows).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Not enough history to build a lookback window.
class WindowError : public Error {
 public:
  using Error::Error;
};

/// A metric that is undefined for the given input (single class, zero variance).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace mkg
