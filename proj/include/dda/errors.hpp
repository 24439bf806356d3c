#pragma once

#include <stdexcept>
#include <string>

namespace dda {

/// Invalid user input: malformed configuration, inconsistent dimensions,
/// structural problems such as a disconnected graph or an empty feasible set.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine could not deliver its postcondition (unstable
/// Lyapunov operator, active-set cycling, non-positive-definite curvature).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dda
