#pragma once

#include <stdexcept>
#include <string>

namespace advgame {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up (matmul inner dims, batch sizes, layer chaining).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// A tape node without a recorded backward graph was reached while
/// building a differentiable gradient.
class SecondOrderUnsupported : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File declares shapes that are inconsistent with each other or with the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace advgame
