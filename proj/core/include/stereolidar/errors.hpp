#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stereolidar {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or malformed array shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient tape (replayed tape, mixed tapes, non-scalar root).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A function argument is outside its admissible range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Nonpositive input to a reciprocal depth/disparity conversion.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A masked average over an empty set (no valid or non-occluded pixels).
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset()` is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace stereolidar
