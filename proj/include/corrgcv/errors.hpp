#pragma once

#include <stdexcept>
#include <string>

namespace corrgcv {

// Class: Error
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidKernel : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct NotPSD : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct SingularFactor : Error { using Error::Error; };
struct EstimatorDomain : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// Class: SolverError
struct SolverError : Error {
  double residual;
  SolverError(const std::string& what, double r) : Error(what), residual(r) {}
};

}  // end of namespace corrgcv ------------------------------------------------
