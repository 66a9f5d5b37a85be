#pragma once

#include <optional>

namespace qstep {

/// Which event-timing error estimate drives the quantum controller.
enum class SigmaEstimator {
  /// |dt(second-order rule) - dt(first-order rule)| of the binding equation
  /// = 0.5 * dq * |phi_curr - phi_prev|. The difference between the two
  /// embedded dual-step predictions; carries real curvature information.
  embedded_difference,
  /// |dt(dq) - dt(dq/2)| evaluated literally. Degenerate: steps are linear
  /// in dq, so this is always exactly half the proposed step and measures
  /// step size, not error. Kept selectable for auditability.
  half_quantum,
};

struct QuantumControllerConfig {
  double dq_init = 0.2;
  double dq_min = 1e-4;
  double dq_max = 4.0;
  double alpha = 0.5;       ///< proportional exponent
  double beta = 0.0;        ///< integral exponent
  double tol = 0.02;        ///< timing-error tolerance, seconds
  double eps_guard = 1e-12; ///< floor for |sigma| before division
  SigmaEstimator estimator = SigmaEstimator::embedded_difference;
};

/// Proportional-integral controller for the quantum:
///   dq_{k+1} = (tol/|sigma_k|)^alpha * (|sigma_{k-1}|/|sigma_k|)^beta * dq_k
/// with |sigma| values floored at eps_guard and the result clamped to
/// [dq_min, dq_max]. Value semantics: one controller per simulation.
class QuantumController {
 public:
  explicit QuantumController(const QuantumControllerConfig& config);

  [[nodiscard]] double dq() const { return dq_; }
  [[nodiscard]] const QuantumControllerConfig& config() const { return cfg_; }

  /// Applies the update rule for the newest error estimate and returns the
  /// new quantum. The first call (no sigma history) treats the integral
  /// factor as 1. Shifts the sigma history afterwards.
  double pi_update(double sigma_k);

  /// Restores dq_init and clears the sigma history. Used when a
  /// disturbance invalidates the error history.
  void reset();

 private:
  QuantumControllerConfig cfg_;
  double dq_;
  std::optional<double> sigma_curr_;
  std::optional<double> sigma_prev_;
};

/// Embedded-difference error estimate for the binding equation:
/// sigma = 0.5 * dq * |phi_curr - phi_prev|, i.e. the gap between the
/// second- and first-order step predictions. Returns 0 when either phi is
/// non-finite (no usable history; the controller then holds).
[[nodiscard]] double estimate_sigma(double phi_binding_curr,
                                    double phi_binding_prev, double dq);

/// Literal half-quantum estimate: |dt(dq) - dt(dq/2)| = 0.5 * dt_predicted,
/// where the prediction is the second-order bracket when the history
/// supports it and the one-point step otherwise. Returns 0 when phi_curr is
/// non-finite.
[[nodiscard]] double estimate_sigma_half_quantum(double phi_binding_curr,
                                                 double phi_binding_prev,
                                                 double dq);

}  // namespace qstep
