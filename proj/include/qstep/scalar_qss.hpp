#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace qstep {

/// Configuration for the scalar quantized-state integrators. The integrator
/// advances the state by a fixed quantum `dq` per event and derives the time
/// increment from the current derivative, instead of fixing the time step.
struct ScalarQssConfig {
  double dq = 0.0;       ///< quantum, in state units; must be > 0
  double x0 = 0.0;       ///< initial state
  double horizon = 0.0;  ///< simulation end time in seconds; must be > 0
  /// Floor for derived steps (guards f -> infinity).
  double dt_min = 1e-6;
  /// Cap for derived steps (guards f -> 0). Defaults to the horizon: a
  /// vanishing derivative then jumps straight to the end of the run.
  double dt_max = std::numeric_limits<double>::infinity();
  std::function<double(double)> f;  ///< x -> dx/dt
};

enum class Termination {
  horizon,       ///< the run reached the end time with a nonzero derivative
  steady_state,  ///< the derivative was exactly zero at the final segment
};

/// One quantization event. `dt` is the step taken *from* this event, so
/// t_{k+1} = t_k + dt_k; the final record sits at the horizon with dt = 0.
/// `clamped` marks steps whose dt came from a floor, cap, or horizon
/// truncation rather than the quantum-crossing formula; such steps are not
/// quantization events and are excluded from timing-error metrics.
struct ScalarQssEvent {
  double t = 0.0;
  double x = 0.0;
  double dt = 0.0;
  bool clamped = false;
};

struct ScalarQssTrace {
  std::vector<ScalarQssEvent> events;
  Termination terminated_by = Termination::horizon;
  double dq = 0.0;  ///< quantum the trace was generated with
};

/// First-order quantized-state integration: each step is
/// dt_k = dq / |f(x_k)| (clamped to [dt_min, dt_max] and truncated at the
/// horizon) and the state advances linearly, x_{k+1} = x_k + dt_k * f(x_k).
/// Throws NonFiniteValue if f returns NaN or infinity.
[[nodiscard]] ScalarQssTrace qss1_simulate(const ScalarQssConfig& config);

/// Second-order variant: dt_k = dq * (1.5 * phi(t_k) - 0.5 * phi(t_{k-1}))
/// with phi = 1/|f|. The first step (no history) falls back to the
/// first-order rule. A negative bracket (phi dropped by more than 3x) floors
/// the step at dt_min and resets the history. Any clamped or truncated step
/// also resets the history, since the two-point formula assumes uniform
/// quantum spacing. State advance stays piecewise-linear at slope f(x_k).
[[nodiscard]] ScalarQssTrace ab2_scalar_simulate(const ScalarQssConfig& config);

/// Exact time for the solution of x' = lambda * x, started at x_k, to move
/// a distance dq from x_k. Returns nullopt when no crossing exists: lambda
/// is zero, x_k is zero, or the decay asymptote is reached first
/// (lambda < 0 with |x_k| <= dq).
[[nodiscard]] std::optional<double> exact_crossing_time(double x_k, double dq,
                                                        double lambda);

/// Per-event relative timing error e_k = |dt_k - dt*_k| / dt*_k against the
/// analytic crossing time for x' = lambda * x. Clamped steps and events with
/// no defined crossing time are skipped. Throws EmptySeries if nothing
/// qualifies.
[[nodiscard]] std::vector<double> timing_error_series(
    const ScalarQssTrace& trace, double lambda);

/// Evaluates the piecewise-linear trace at time t (exact between events,
/// since the state moves at constant slope per segment). t is clipped to the
/// trace's time range.
[[nodiscard]] double sample_trace(const ScalarQssTrace& trace, double t);

/// Writes the trace as CSV with columns
/// `k, t_k, x_k, dt_k, dt_star_k, rel_err_k`. dt_star is the analytic
/// crossing time for x' = lambda * x (blank where undefined); rel_err is
/// filled only for unclamped quantization events.
void export_scalar_trace(const ScalarQssTrace& trace, double lambda,
                         const std::filesystem::path& path);

}  // namespace qstep
