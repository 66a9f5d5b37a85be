#include "qstep/scalar_qss.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "qstep/csv.hpp"
#include "qstep/errors.hpp"

namespace qstep {

namespace {

void validate(const ScalarQssConfig& config) {
  if (!(config.dq > 0.0)) throw DataError("scalar qss: dq must be > 0");
  if (!(config.horizon > 0.0)) throw DataError("scalar qss: horizon must be > 0");
  if (!(config.dt_min > 0.0) || !(config.dt_max > 0.0) ||
      config.dt_min > config.dt_max) {
    throw DataError("scalar qss: need 0 < dt_min <= dt_max");
  }
  if (!config.f) throw DataError("scalar qss: derivative function not set");
}

double eval_checked(const std::function<double(double)>& f, double x) {
  const double fx = f(x);
  if (std::isnan(fx) || std::isinf(fx)) {
    throw NonFiniteValue(fmt::format("derivative is not finite at x = {}", x));
  }
  return fx;
}

/// Shared stepping loop. `use_history` selects the two-point step rule.
ScalarQssTrace run(const ScalarQssConfig& config, bool use_history) {
  validate(config);
  const double cap = std::min(config.dt_max, config.horizon);

  ScalarQssTrace trace;
  trace.dq = config.dq;

  double t = 0.0;
  double x = config.x0;
  std::optional<double> phi_prev;  // history for the two-point rule
  bool last_f_zero = false;

  while (t < config.horizon - 1e-15) {
    const double fx = eval_checked(config.f, x);
    last_f_zero = (fx == 0.0);
    const double phi =
        last_f_zero ? std::numeric_limits<double>::infinity() : 1.0 / std::abs(fx);

    double raw;
    bool negative_bracket = false;
    if (use_history && phi_prev.has_value() && std::isfinite(phi) &&
        std::isfinite(*phi_prev)) {
      const double bracket = 1.5 * phi - 0.5 * (*phi_prev);
      if (bracket > 0.0) {
        raw = config.dq * bracket;
      } else {
        negative_bracket = true;
        raw = 0.0;  // floored to dt_min below
      }
    } else {
      raw = config.dq * phi;  // first-order rule (infinity when f == 0)
    }

    const double remaining = config.horizon - t;
    double dt = std::clamp(raw, config.dt_min, cap);
    bool clamped = negative_bracket || (dt != raw);
    if (dt >= remaining) {
      dt = remaining;
      clamped = true;  // horizon truncation is not a quantization event
    }

    trace.events.push_back({t, x, dt, clamped});
    x += dt * fx;
    t += dt;

    // A clamped step breaks the uniform quantum spacing the two-point
    // formula assumes; restart from the one-point rule.
    phi_prev = clamped ? std::nullopt : std::optional<double>(phi);
  }

  trace.events.push_back({config.horizon, x, 0.0, true});
  trace.terminated_by =
      last_f_zero ? Termination::steady_state : Termination::horizon;
  return trace;
}

}  // namespace

ScalarQssTrace qss1_simulate(const ScalarQssConfig& config) {
  return run(config, /*use_history=*/false);
}

ScalarQssTrace ab2_scalar_simulate(const ScalarQssConfig& config) {
  return run(config, /*use_history=*/true);
}

std::optional<double> exact_crossing_time(double x_k, double dq,
                                          double lambda) {
  if (lambda == 0.0 || x_k == 0.0 || !(dq > 0.0)) return std::nullopt;
  const double a = std::abs(x_k);
  if (lambda < 0.0) {
    // |x| decays toward zero; the crossing at |x_k| - dq may not exist.
    if (a <= dq) return std::nullopt;
    return std::log(a / (a - dq)) / std::abs(lambda);
  }
  return std::log((a + dq) / a) / lambda;
}

std::vector<double> timing_error_series(const ScalarQssTrace& trace,
                                        double lambda) {
  std::vector<double> errors;
  for (const auto& ev : trace.events) {
    if (ev.clamped) continue;
    const auto dt_star = exact_crossing_time(ev.x, trace.dq, lambda);
    if (!dt_star) continue;
    errors.push_back(std::abs(ev.dt - *dt_star) / *dt_star);
  }
  if (errors.empty()) {
    throw EmptySeries("timing_error_series: no event has a defined crossing time");
  }
  return errors;
}

double sample_trace(const ScalarQssTrace& trace, double t) {
  if (trace.events.empty()) throw EmptySeries("sample_trace: empty trace");
  const auto& ev = trace.events;
  if (t <= ev.front().t) return ev.front().x;
  if (t >= ev.back().t) return ev.back().x;
  // Find the segment [t_k, t_{k+1}) containing t.
  auto it = std::upper_bound(
      ev.begin(), ev.end(), t,
      [](double value, const ScalarQssEvent& e) { return value < e.t; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double span = hi.t - lo.t;
  if (span <= 0.0) return lo.x;
  const double w = (t - lo.t) / span;
  return lo.x + w * (hi.x - lo.x);
}

void export_scalar_trace(const ScalarQssTrace& trace, double lambda,
                         const std::filesystem::path& path) {
  CsvWriter csv(path);
  csv.header({"k", "t_k", "x_k", "dt_k", "dt_star_k", "rel_err_k"});
  for (size_t k = 0; k < trace.events.size(); ++k) {
    const auto& ev = trace.events[k];
    const auto dt_star = exact_crossing_time(ev.x, trace.dq, lambda);
    csv.begin_row().add(static_cast<long long>(k)).add(ev.t).add(ev.x).add(ev.dt);
    if (dt_star) {
      csv.add(*dt_star);
    } else {
      csv.add_blank();
    }
    if (dt_star && !ev.clamped) {
      csv.add(std::abs(ev.dt - *dt_star) / *dt_star);
    } else {
      csv.add_blank();
    }
    csv.end_row();
  }
}

}  // namespace qstep
