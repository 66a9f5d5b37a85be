#pragma once

#include <stdexcept>
#include <string>

namespace qstep {

/// Base class for every error thrown by this library. Catching `qstep::Error`
/// is sufficient to isolate a failing run (the benchmark harness relies on
/// this to keep going when one configuration blows up).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A NaN or infinity appeared where a finite value is required (derivative
/// evaluation, Jacobian entry, Newton iterate, ...).
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

/// An iterative solve (Newton corrector, consistent initialization, power
/// flow) failed to reach its tolerance within the iteration budget.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, int iterations, double residual)
      : Error(what), iterations(iterations), residual(residual) {}

  int iterations;    ///< iterations performed before giving up
  double residual;   ///< infinity-norm of the residual at the last iterate
};

/// The linear system inside a Newton solve is singular or so ill-conditioned
/// that its solution is meaningless.
class SingularJacobian : public Error {
 public:
  using Error::Error;
};

/// Malformed or physically inconsistent input data (model files, scenario
/// files, benchmark matrices, out-of-range parameters).
class DataError : public Error {
 public:
  using Error::Error;
};

/// The steady-state power flow used to initialize a network model did not
/// converge.
class PowerFlowError : public Error {
 public:
  using Error::Error;
};

/// A switching action would sever part of the network that still contains a
/// machine or load, leaving the model without a meaningful solution.
class TopologyError : public Error {
 public:
  using Error::Error;
};

/// Two trajectories cannot be compared because their time grids do not cover
/// a common interval.
class GridError : public Error {
 public:
  using Error::Error;
};

/// A scheduled disturbance falls outside the simulation window or the event
/// list is otherwise unusable.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// A series reduction (mean, maximum, ...) was requested on an empty series.
class EmptySeries : public Error {
 public:
  using Error::Error;
};

/// An operation that only makes sense for adaptive-quantum runs was invoked
/// on a fixed-quantum or fixed-step trajectory.
class NotAdaptive : public Error {
 public:
  using Error::Error;
};

}  // namespace qstep
