#pragma once

#include <stdexcept>
#include <string>

namespace seedet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, bad extents, bad channel counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an operator, or a diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or argument combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated, or malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace seedet
