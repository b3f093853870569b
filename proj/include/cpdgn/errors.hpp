#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpdgn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up (dims, factor rows, vector lengths).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input carries no information to work with (zero tensor, too few samples).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// An index, mode or rank target falls outside its admissible range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied parameter violates its precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared inside an iterative method.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Malformed tensor file. `offset()` is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Report file written by an incompatible schema version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpdgn
