#include "qstep/dual_stepper.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "qstep/errors.hpp"

namespace qstep {

Eigen::VectorXd compute_phi(const Eigen::VectorXd& f_values) {
  Eigen::VectorXd phi(f_values.size());
  for (Eigen::Index i = 0; i < f_values.size(); ++i) {
    const double fi = f_values[i];
    if (!std::isfinite(fi)) {
      throw NonFiniteValue(
          fmt::format("compute_phi: f[{}] is not finite ({})", i, fi));
    }
    phi[i] = (fi == 0.0) ? std::numeric_limits<double>::infinity()
                         : 1.0 / std::abs(fi);
  }
  return phi;
}

StepProposal propose_step(const DualHistory& history,
                          const StepControlConfig& config) {
  const Eigen::Index n = history.phi_curr.size();
  if (n == 0) throw DataError("propose_step: history has no current sample");
  if (!(config.dq > 0.0) || !(config.dt_min > 0.0) ||
      config.dt_min > config.dt_max) {
    throw DataError("propose_step: need dq > 0 and 0 < dt_min <= dt_max");
  }
  if (config.scale.size() != 0 && config.scale.size() != n) {
    throw DataError("propose_step: scale vector size mismatch");
  }

  double best = std::numeric_limits<double>::infinity();
  int binding = kNoBinding;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double phi = history.phi_curr[i];
    double candidate = phi;  // one-point rule
    if (config.mode == StepMode::qss_ab2 && history.has_prev() &&
        static_cast<size_t>(i) < history.valid.size() && history.valid[i]) {
      const double bracket = 1.5 * phi - 0.5 * history.phi_prev[i];
      if (bracket > 0.0) candidate = bracket;
      // A non-positive bracket keeps the one-point candidate: positivity is
      // preserved per equation without resetting the whole history.
    }
    const double scale_i = config.scale.size() ? config.scale[i] : 1.0;
    const double dt_i = config.dq * scale_i * candidate;
    if (dt_i < best) {
      best = dt_i;
      binding = static_cast<int>(i);
    }
  }

  if (binding == kNoBinding) return {config.dt_max, kNoBinding};
  return {std::clamp(best, config.dt_min, config.dt_max), binding};
}

DualHistory advance_history(DualHistory history,
                            const Eigen::VectorXd& new_phi) {
  history.phi_prev = std::move(history.phi_curr);
  history.phi_curr = new_phi;
  const auto n = static_cast<size_t>(new_phi.size());
  history.valid.assign(n, false);
  if (history.phi_prev.size() == new_phi.size()) {
    for (size_t i = 0; i < n; ++i) {
      history.valid[i] = std::isfinite(history.phi_prev[i]) &&
                         std::isfinite(history.phi_curr[i]);
    }
  }
  return history;
}

DualHistory reset_history(DualHistory history) {
  history.phi_prev.resize(0);
  history.valid.assign(history.valid.size(), false);
  return history;
}

}  // namespace qstep
