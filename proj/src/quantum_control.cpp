#include "qstep/quantum_control.hpp"

#include <algorithm>
#include <cmath>

#include "qstep/errors.hpp"

namespace qstep {

QuantumController::QuantumController(const QuantumControllerConfig& config)
    : cfg_(config) {
  if (!(cfg_.dq_min > 0.0) || cfg_.dq_min > cfg_.dq_max) {
    throw DataError("quantum controller: need 0 < dq_min <= dq_max");
  }
  if (!(cfg_.tol > 0.0) || !(cfg_.eps_guard > 0.0)) {
    throw DataError("quantum controller: tol and eps_guard must be > 0");
  }
  dq_ = std::clamp(cfg_.dq_init, cfg_.dq_min, cfg_.dq_max);
}

double QuantumController::pi_update(double sigma_k) {
  const double s = std::max(std::abs(sigma_k), cfg_.eps_guard);
  double factor = std::pow(cfg_.tol / s, cfg_.alpha);
  if (cfg_.beta != 0.0 && sigma_curr_.has_value()) {
    const double s_prev = std::max(std::abs(*sigma_curr_), cfg_.eps_guard);
    factor *= std::pow(s_prev / s, cfg_.beta);
  }
  dq_ = std::clamp(dq_ * factor, cfg_.dq_min, cfg_.dq_max);
  sigma_prev_ = sigma_curr_;
  sigma_curr_ = sigma_k;
  return dq_;
}

void QuantumController::reset() {
  dq_ = std::clamp(cfg_.dq_init, cfg_.dq_min, cfg_.dq_max);
  sigma_curr_.reset();
  sigma_prev_.reset();
}

double estimate_sigma(double phi_binding_curr, double phi_binding_prev,
                      double dq) {
  if (!std::isfinite(phi_binding_curr) || !std::isfinite(phi_binding_prev)) {
    return 0.0;
  }
  return 0.5 * dq * std::abs(phi_binding_curr - phi_binding_prev);
}

double estimate_sigma_half_quantum(double phi_binding_curr,
                                   double phi_binding_prev, double dq) {
  if (!std::isfinite(phi_binding_curr)) return 0.0;
  double predicted = phi_binding_curr;
  if (std::isfinite(phi_binding_prev)) {
    const double bracket = 1.5 * phi_binding_curr - 0.5 * phi_binding_prev;
    if (bracket > 0.0) predicted = bracket;
  }
  return 0.5 * dq * predicted;
}

}  // namespace qstep
