#pragma once

#include <stdexcept>
#include <string>

namespace utvae {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input or configuration. The CLI maps this to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside a primitive's mathematical domain, e.g. log of a non-positive value.
class DomainError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf where a finite value is required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace utvae
