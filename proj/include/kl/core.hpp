#pragma once

// Shared vocabulary types and error classes.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (state dimension, matrix sizes, file contents).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or configuration.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed (divergence, solver breakdown, non-finite loss).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Integration left the finite range; `step` is the index of the offending step.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : NumericalError(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// The requested operation is not available for this input kind
/// (for example analytic derivatives of a network dictionary).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the arguments was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace kl
