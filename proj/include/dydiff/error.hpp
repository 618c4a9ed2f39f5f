#pragma once

#include <stdexcept>
#include <string>

namespace dydiff {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or violated precondition on a user-facing parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted file (JSON parse failure, truncated record, bad field).
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MissingInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace dydiff
