#pragma once

#include <stdexcept>
#include <string>

namespace cdfgo {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed config, out-of-range parameter, unreadable file.
// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry (coincident points, singular DOP).
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown at runtime (non-finite residuals, singular normal
// matrix). The CLI maps these to exit code 2.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, double condition = 0.0)
      : Error(what), condition_(condition) {}

  // Estimated condition number of the offending matrix, 0 when unknown.
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace cdfgo
