#pragma once

#include <stdexcept>
#include <string>

namespace seqmt {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A layer or chain was used out of order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A layer, chain or parameter registry was assembled incorrectly.
class ConstructionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An attention column had no unmasked source position.
class MaskError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqmt
