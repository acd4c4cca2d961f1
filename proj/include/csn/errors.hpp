#pragma once

#include <stdexcept>
#include <string>

namespace csn {

// Operand shapes do not satisfy an op's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A forward or backward pass produced NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files, manifests, containers or configs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace csn
