#pragma once

#include <stdexcept>
#include <string>

namespace vgan {

// Base for every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed container, bad header, shape/payload mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A value violates a type invariant (zero extent, non-finite voxel, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Configuration or argument out of its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Two operands disagree on shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A named resource (checkpoint, stored volume, slice) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace vgan
