#pragma once

#include <stdexcept>
#include <string>

namespace av2av {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// An edit or instruction that cannot be bound to the given scene.
class NotApplicableError : public Error {
 public:
  using Error::Error;
};

// Generation gave up after its bounded retry budget.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class GrammarError : public Error {
 public:
  using Error::Error;
};

}  // namespace av2av
