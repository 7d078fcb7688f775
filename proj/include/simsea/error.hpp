#pragma once

#include <stdexcept>
#include <string>

namespace simsea {

/// Base of all errors raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: malformed manifest, label file, config value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

/// An upstream pipeline artifact is missing.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace simsea
