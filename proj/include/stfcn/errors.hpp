// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace stfcn {

/// Base of every error raised by the library. The CLI maps subclasses to
/// exit codes (configuration 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer / model / optimizer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value detected.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (labels, images, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong state (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than the configured window in strict mode.
class SequenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace stfcn
