#pragma once

#include <stdexcept>
#include <string>

namespace rmflow {

/// Operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN or Inf, or a numeric precondition failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or cross-field constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reverse or forward sweep reached an op without the required derivative rule.
class NonDifferentiableError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace rmflow
