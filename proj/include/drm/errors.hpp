#pragma once

#include <stdexcept>
#include <string>

namespace drm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad input: wrong dimensions, out-of-range parameters, malformed specs.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

// Numerical abort: grid leakage, stability criterion violated.
class NumericalError : public Error {
public:
  using Error::Error;
};

// The requested dynamics has no exact treatment in this library.
class CapabilityError : public Error {
public:
  using Error::Error;
};

// Monte Carlo precondition not met (too few samples in a conditioning class).
class StatisticalError : public Error {
public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace drm
