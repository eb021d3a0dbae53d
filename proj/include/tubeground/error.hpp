#pragma once

#include <stdexcept>
#include <string>

namespace tubeground {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree, or a dimension is empty.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an op (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data fails an invariant (bad box, bad confidence, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf surfaced during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tubeground
