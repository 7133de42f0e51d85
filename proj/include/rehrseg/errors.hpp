#pragma once

#include <stdexcept>
#include <string>

namespace rehrseg {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reading or writing files failed, or a file had unusable contents.
class IoError : public Error {
 public:
  using Error::Error;
};

// Operands have incompatible shapes, axes or parameters.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value violates an operation's domain (e.g. U outside (0,1), empty mask).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Optimization diverged or produced non-finite values.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace rehrseg
