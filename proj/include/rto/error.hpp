#pragma once

#include <stdexcept>
#include <string>

namespace rto {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing parameter (Poisson ratio, kappa, hyperparameters...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Operation called with inputs violating its precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Stiffness system cannot be made positive definite with the given supports.
class AssemblyError : public Error {
 public:
  using Error::Error;
};

/// Linear solve failed to reach the requested residual.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Box and volume constraints cannot be satisfied simultaneously.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (bracket expansion failure, NaN, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Object used before it reached the required state (e.g. uncalibrated step policy).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Failure inside the optimization loop, tagged with the step index.
class RunError : public Error {
 public:
  RunError(int step, const std::string& cause)
      : Error("step " + std::to_string(step) + ": " + cause), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace rto
