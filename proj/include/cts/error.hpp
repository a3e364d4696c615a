#pragma once

#include <stdexcept>
#include <string>

namespace cts {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Label id outside the valid vocabulary range.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// CTC target that cannot be emitted in the available number of frames.
class InfeasibleTargetError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class InputTooShortError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during optimization.
class TrainingFailure : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint, dataset, mask or config file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cts
