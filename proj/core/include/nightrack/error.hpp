#pragma once

#include <stdexcept>
#include <string>

namespace nightrack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with an operation's contract. The message names the
/// offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a precondition (nonpositive step size, empty prompt, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient recorder.
class GradError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nightrack
