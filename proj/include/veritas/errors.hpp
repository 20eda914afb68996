#pragma once

#include <stdexcept>
#include <string>

namespace veritas {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise malformed numeric input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Mismatched matrix/vector dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad knob values, unknown measure names, impossible fold schemes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data outside its declared domain (labels outside the class set, inconsistent records).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace veritas
