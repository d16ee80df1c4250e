#pragma once

#include <stdexcept>
#include <string>

namespace tdcosim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Arithmetic or transform applied to a value in the wrong frame.
class FrameError : public Error {
public:
  using Error::Error;
};

/// Invalid input value (non-finite numbers, out-of-range arguments).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Model description violates a structural invariant (radiality, connectivity, bases).
class ModelError : public Error {
public:
  using Error::Error;
};

/// A linear system or reduction that needs an inverse hit a singular matrix.
class SingularError : public Error {
public:
  using Error::Error;
};

/// An iterative solver exhausted its iteration budget or diverged.
class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

private:
  int iterations_;
};

/// Malformed model, scenario or CSV file. Carries the location when known.
class ParseError : public Error {
public:
  using Error::Error;
};

} // namespace tdcosim
