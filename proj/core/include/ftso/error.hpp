#pragma once

#include <stdexcept>
#include <string>

namespace ftso {

// Base for every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not satisfy a primitive's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input files, bad configuration values, invalid genotypes.
class DataError : public Error {
 public:
  using Error::Error;
};

// Divergent losses, non-finite Hessian-vector products.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ftso
