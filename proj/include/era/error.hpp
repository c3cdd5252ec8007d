#pragma once

#include <stdexcept>
#include <string>

namespace era {

/// Input outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A truncated Gaussian whose mass on [-1, 1] underflows.
class DegenerateMassError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Mismatched vector lengths or tensor shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration that violates its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace era
