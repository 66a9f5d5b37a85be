#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "qstep/dae.hpp"
#include "qstep/dual_stepper.hpp"
#include "qstep/quantum_control.hpp"

namespace qstep {

enum class JacobianRefresh {
  every_iteration,  ///< rebuild the Newton matrix each iteration (default)
  first_iteration,  ///< build once per step, reuse across iterations
};

struct TmConfig {
  double newton_tol = 1e-8;  ///< infinity-norm residual tolerance
  int max_newton_iters = 20;
  JacobianRefresh refresh = JacobianRefresh::every_iteration;
  int max_step_retries = 5;  ///< driver halves dt this many times on failure
};

/// One implicit trapezoidal step of length dt:
///   R_x = x+ - x - (dt/2) (f(x, y) + f(x+, y+)) = 0,   R_y = g(x+, y+) = 0
/// solved by Newton on (x+, y+) from a forward-Euler predictor (previous y).
/// Throws NonConvergence or SingularJacobian on failure; the driver halves
/// dt and retries before giving up.
[[nodiscard]] SystemState tm_step(const ExplicitDaeSystem& system,
                                  const SystemState& state, double dt,
                                  const TmConfig& config = {});

/// How the driver chooses each step.
enum class DriverMode {
  fixed_dt,          ///< constant dt
  qss1_sync,         ///< first-order quantized proposal, fixed dq
  qss_ab2,           ///< second-order quantized proposal, fixed dq
  qss_ab2_adaptive,  ///< second-order proposal, dq adapted by the controller
};

struct StepSourceSpec {
  DriverMode mode = DriverMode::fixed_dt;
  double dt_fixed = 1e-3;  ///< fixed_dt mode
  double dq = 0.24;        ///< quantum for the qss modes
  double dt_min = 1e-6;
  double dt_max = 0.25;
  Eigen::VectorXd scale;  ///< optional per-state quantum multipliers
  QuantumControllerConfig controller;  ///< adaptive mode parameters
  /// Restart the quantum controller (dq back to dq_init, error history
  /// cleared) whenever a disturbance fires. The disturbance invalidates the
  /// error history just as it invalidates the step history.
  bool reset_controller_at_events = true;
};

/// Horizon plus the scheduled disturbances of one run.
struct ScenarioRun {
  double horizon = 20.0;
  std::vector<DisturbanceEvent> events;
};

/// One accepted step: the state at time t, reached by a step of length dt.
/// dq/sigma/binding_index echo the step proposal that produced it
/// (dq = 0 and binding kNoBinding for fixed-dt runs; sigma = 0 where no
/// estimate was available).
struct TrajectoryRecord {
  double t = 0.0;
  double dt = 0.0;
  double dq = 0.0;
  double sigma = 0.0;
  int binding_index = kNoBinding;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;  ///< records[0] is the initial state
  DriverMode mode = DriverMode::fixed_dt;

  [[nodiscard]] bool adaptive() const {
    return mode == DriverMode::qss_ab2_adaptive;
  }
  [[nodiscard]] long long accepted_steps() const {
    return records.empty() ? 0
                           : static_cast<long long>(records.size()) - 1;
  }
};

/// Integrates the system from `initial` to the horizon. Per accepted step:
/// evaluate f, shift the dual history, (adaptive mode) estimate sigma for
/// the binding equation and update dq, propose dt, truncate to the next
/// disturbance time or the horizon, take the trapezoidal step, record.
/// Disturbance times are hit exactly; each disturbance re-solves the
/// algebraics with x held, resets the dual history, and (if configured)
/// resets the quantum controller. Failed steps are retried at half dt up to
/// config.max_step_retries times. Throws ScheduleError if an event lies
/// outside [0, horizon].
[[nodiscard]] Trajectory simulate(ExplicitDaeSystem& system,
                                  const SystemState& initial,
                                  const ScenarioRun& scenario,
                                  const StepSourceSpec& step_source,
                                  const TmConfig& config = {});

/// Writes a trajectory as CSV:
/// `t, dt, dq, sigma, binding_index, x_0..x_{n-1}, y_0..y_{m-1}`.
void export_trajectory_csv(const Trajectory& trajectory,
                           const std::filesystem::path& path);

/// Reads a trajectory CSV written by export_trajectory_csv (used by the
/// compare tool). Throws DataError on malformed input.
[[nodiscard]] Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace qstep
