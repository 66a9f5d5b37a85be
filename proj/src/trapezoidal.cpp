#include "qstep/trapezoidal.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qstep/csv.hpp"
#include "qstep/errors.hpp"

namespace qstep {

namespace {

constexpr double kTimeEps = 1e-12;

Eigen::MatrixXd newton_matrix(const ExplicitDaeSystem& system,
                              const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y, double dt) {
  const int n = system.n_states();
  const int m = system.n_algebraic();
  Eigen::MatrixXd jac(n + m, n + m);
  jac.topLeftCorner(n, n) =
      Eigen::MatrixXd::Identity(n, n) - 0.5 * dt * system.jac_fx(x, y);
  if (m > 0) {
    jac.topRightCorner(n, m) = -0.5 * dt * system.jac_fy(x, y);
    jac.bottomLeftCorner(m, n) = system.jac_gx(x, y);
    jac.bottomRightCorner(m, m) = system.jac_gy(x, y);
  }
  return jac;
}

}  // namespace

SystemState tm_step(const ExplicitDaeSystem& system, const SystemState& state,
                    double dt, const TmConfig& config) {
  if (!(dt > 0.0)) throw DataError("tm_step: dt must be > 0");
  const int n = system.n_states();
  const int m = system.n_algebraic();

  const Eigen::VectorXd f0 = system.f_at(state.x, state.y);

  // Forward-Euler predictor for x, previous value for y.
  Eigen::VectorXd x_next = state.x + dt * f0;
  Eigen::VectorXd y_next = state.y;

  Eigen::VectorXd residual(n + m);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  bool have_lu = false;

  double res_norm = 0.0;
  for (int iter = 0; iter < config.max_newton_iters; ++iter) {
    const Eigen::VectorXd f1 = system.f_at(x_next, y_next);
    residual.head(n) = x_next - state.x - 0.5 * dt * (f0 + f1);
    if (m > 0) residual.tail(m) = system.g_at(x_next, y_next);
    res_norm = residual.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(res_norm)) {
      throw NonFiniteValue("tm_step: residual is not finite");
    }
    if (res_norm <= config.newton_tol) {
      SystemState next;
      next.t = state.t + dt;
      next.x = std::move(x_next);
      next.y = std::move(y_next);
      return next;
    }

    if (!have_lu || config.refresh == JacobianRefresh::every_iteration) {
      const Eigen::MatrixXd jac = newton_matrix(system, x_next, y_next, dt);
      lu.compute(jac);
      // PartialPivLU has no rank detection; probe the factor diagonal.
      const double dmin = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
      const double dmax = lu.matrixLU().diagonal().cwiseAbs().maxCoeff();
      if (dmin == 0.0 || (dmax > 0.0 && dmin / dmax < 1e-14)) {
        throw SingularJacobian(
            "tm_step: Newton matrix is numerically singular");
      }
      have_lu = true;
    }
    const Eigen::VectorXd delta = lu.solve(residual);
    x_next -= delta.head(n);
    if (m > 0) y_next -= delta.tail(m);
  }
  throw NonConvergence(
      fmt::format("tm_step: Newton stalled at residual {:.3e} after {} "
                  "iterations (dt = {:.3e})",
                  res_norm, config.max_newton_iters, dt),
      config.max_newton_iters, res_norm);
}

namespace {

/// tm_step with the halve-and-retry policy.
SystemState tm_step_retry(const ExplicitDaeSystem& system,
                          const SystemState& state, double* dt,
                          const TmConfig& config) {
  double attempt = *dt;
  for (int retry = 0;; ++retry) {
    try {
      SystemState next = tm_step(system, state, attempt, config);
      *dt = attempt;
      return next;
    } catch (const NonConvergence&) {
      if (retry >= config.max_step_retries) throw;
    } catch (const SingularJacobian&) {
      if (retry >= config.max_step_retries) throw;
    }
    attempt *= 0.5;
  }
}

}  // namespace

Trajectory simulate(ExplicitDaeSystem& system, const SystemState& initial,
                    const ScenarioRun& scenario,
                    const StepSourceSpec& step_source, const TmConfig& config) {
  if (!(scenario.horizon > 0.0)) {
    throw DataError("simulate: horizon must be > 0");
  }
  for (const auto& ev : scenario.events) {
    if (ev.time < 0.0 || ev.time > scenario.horizon) {
      throw ScheduleError(fmt::format(
          "event '{}' at t = {} lies outside [0, {}]", ev.label, ev.time,
          scenario.horizon));
    }
  }
  std::vector<DisturbanceEvent> events = scenario.events;
  std::stable_sort(events.begin(), events.end(),
                   [](const DisturbanceEvent& a, const DisturbanceEvent& b) {
                     return a.time < b.time;
                   });

  const bool quantized = step_source.mode != DriverMode::fixed_dt;
  const bool adaptive = step_source.mode == DriverMode::qss_ab2_adaptive;

  StepControlConfig control;
  control.mode = step_source.mode == DriverMode::qss1_sync
                     ? StepMode::qss1_sync
                     : StepMode::qss_ab2;
  control.dq = step_source.dq;
  control.dt_min = step_source.dt_min;
  control.dt_max = step_source.dt_max;
  control.scale = step_source.scale;

  QuantumController controller(step_source.controller);
  if (adaptive) control.dq = controller.dq();

  Trajectory trajectory;
  trajectory.mode = step_source.mode;

  SystemState state = initial;
  state.t = 0.0;
  DualHistory history;

  TrajectoryRecord first;
  first.t = 0.0;
  first.dq = quantized ? control.dq : 0.0;
  first.x = state.x;
  first.y = state.y;
  trajectory.records.push_back(first);

  size_t next_event = 0;
  while (state.t < scenario.horizon - kTimeEps) {
    // Fire every disturbance scheduled at (or before) the current time.
    bool fired = false;
    while (next_event < events.size() &&
           events[next_event].time <= state.t + kTimeEps) {
      state = apply_event(system, events[next_event], state, config.newton_tol);
      history = reset_history(history);
      if (adaptive && step_source.reset_controller_at_events) {
        controller.reset();
        control.dq = controller.dq();
      }
      ++next_event;
      fired = true;
    }
    if (fired) {
      // The algebraics jumped; keep the stored point consistent with what
      // the next step integrates from.
      trajectory.records.back().x = state.x;
      trajectory.records.back().y = state.y;
    }

    double dt = step_source.dt_fixed;
    double sigma = 0.0;
    int binding = kNoBinding;
    if (quantized) {
      const Eigen::VectorXd phi = compute_phi(system.f_at(state.x, state.y));
      history = advance_history(history, phi);
      StepProposal proposal = propose_step(history, control);
      if (adaptive) {
        const int b = proposal.binding_index;
        if (b == kNoBinding) {
          // Equilibrium: no equation binds, the error estimate vanishes and
          // the controller opens the quantum up.
          control.dq = controller.pi_update(0.0);
          proposal = propose_step(history, control);
        } else if (history.has_prev() && history.valid[static_cast<size_t>(b)]) {
          const double scale_b =
              control.scale.size() ? control.scale[b] : 1.0;
          sigma = (step_source.controller.estimator ==
                   SigmaEstimator::embedded_difference)
                      ? estimate_sigma(history.phi_curr[b], history.phi_prev[b],
                                       control.dq * scale_b)
                      : estimate_sigma_half_quantum(history.phi_curr[b],
                                                    history.phi_prev[b],
                                                    control.dq * scale_b);
          control.dq = controller.pi_update(sigma);
          // The argmin is invariant to dq (a common positive factor), so
          // re-proposing with the new quantum keeps the same binding.
          proposal = propose_step(history, control);
        }
        // else: no usable history yet; hold the quantum.
      }
      dt = proposal.dt;
      binding = proposal.binding_index;
    }

    // Truncate to the next disturbance or the horizon, landing exactly.
    double t_stop = scenario.horizon;
    if (next_event < events.size()) {
      t_stop = std::min(t_stop, events[next_event].time);
    }
    bool truncated = false;
    if (state.t + dt >= t_stop - kTimeEps) {
      dt = t_stop - state.t;
      truncated = true;
    }

    double dt_taken = dt;
    state = tm_step_retry(system, state, &dt_taken, config);
    if (truncated && dt_taken == dt) state.t = t_stop;

    TrajectoryRecord rec;
    rec.t = state.t;
    rec.dt = dt_taken;
    rec.dq = quantized ? control.dq : 0.0;
    rec.sigma = sigma;
    rec.binding_index = binding;
    rec.x = state.x;
    rec.y = state.y;
    trajectory.records.push_back(std::move(rec));
  }
  return trajectory;
}

void export_trajectory_csv(const Trajectory& trajectory,
                           const std::filesystem::path& path) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"t", "dt", "dq", "sigma", "binding_index"};
  if (!trajectory.records.empty()) {
    const auto& r0 = trajectory.records.front();
    for (Eigen::Index i = 0; i < r0.x.size(); ++i) {
      names.push_back(fmt::format("x_{}", i));
    }
    for (Eigen::Index i = 0; i < r0.y.size(); ++i) {
      names.push_back(fmt::format("y_{}", i));
    }
  }
  csv.header(names);
  for (const auto& rec : trajectory.records) {
    csv.begin_row().add(rec.t).add(rec.dt).add(rec.dq).add(rec.sigma).add(
        rec.binding_index);
    for (Eigen::Index i = 0; i < rec.x.size(); ++i) csv.add(rec.x[i]);
    for (Eigen::Index i = 0; i < rec.y.size(); ++i) csv.add(rec.y[i]);
    csv.end_row();
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(fmt::format("'{}' is empty", path.string()));
  }
  // Header: count x_ / y_ columns.
  int n = 0;
  int m = 0;
  {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 5 || fields[0] != "t") {
      throw DataError(fmt::format("'{}' is not a trajectory CSV", path.string()));
    }
    for (const auto& name : fields) {
      if (name.rfind("x_", 0) == 0) ++n;
      if (name.rfind("y_", 0) == 0) ++m;
    }
  }
  Trajectory trajectory;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError(fmt::format("{}:{}: bad number '{}'", path.string(),
                                    line_no, field));
      }
    }
    if (values.size() != static_cast<size_t>(5 + n + m)) {
      throw DataError(fmt::format("{}:{}: expected {} fields, found {}",
                                  path.string(), line_no, 5 + n + m,
                                  values.size()));
    }
    TrajectoryRecord rec;
    rec.t = values[0];
    rec.dt = values[1];
    rec.dq = values[2];
    rec.sigma = values[3];
    rec.binding_index = static_cast<int>(values[4]);
    rec.x = Eigen::Map<Eigen::VectorXd>(values.data() + 5, n);
    rec.y = Eigen::Map<Eigen::VectorXd>(values.data() + 5 + n, m);
    trajectory.records.push_back(std::move(rec));
  }
  return trajectory;
}

}  // namespace qstep
