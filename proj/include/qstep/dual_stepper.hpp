#pragma once

#include <Eigen/Dense>
#include <vector>

namespace qstep {

/// Sentinel binding index reported when every candidate step is infinite
/// (all derivatives exactly zero — the system sits at an equilibrium).
inline constexpr int kNoBinding = -1;

/// Rolling record of the per-equation inverse derivative magnitudes
/// phi_i = 1/|f_i| at the last two accepted steps. A vector of size zero
/// means "absent" (fresh history, or history discarded after a
/// disturbance). `valid[i]` says equation i has two finite entries and may
/// use the two-point step rule; otherwise it falls back to the one-point
/// rule. Values are passed and returned, never shared mutably.
struct DualHistory {
  Eigen::VectorXd phi_curr;
  Eigen::VectorXd phi_prev;
  std::vector<bool> valid;

  [[nodiscard]] bool has_curr() const { return phi_curr.size() > 0; }
  [[nodiscard]] bool has_prev() const { return phi_prev.size() > 0; }
};

enum class StepMode {
  qss1_sync,  ///< dt = min_i dq * phi_i(t_k): first-order, synchronized
  qss_ab2,    ///< dt = min_i dq * (1.5 phi_i(t_k) - 0.5 phi_i(t_{k-1}))
};

struct StepControlConfig {
  StepMode mode = StepMode::qss1_sync;
  double dq = 0.2;      ///< shared quantum (per-unit state space)
  double dt_min = 1e-6;
  double dt_max = 1.0;
  /// Optional per-state quantum multipliers; empty means all ones. A shared
  /// quantum is meaningful because states are in per-unit; the multiplier
  /// lets callers renormalize states on other scales (e.g. angles in rad).
  Eigen::VectorXd scale;
};

struct StepProposal {
  double dt = 0.0;
  int binding_index = kNoBinding;  ///< equation attaining the minimum
};

/// phi_i = 1/|f_i|, with f_i == 0 mapped to +infinity (the equation then
/// never binds the step). Throws NonFiniteValue if any input is NaN or
/// infinite.
[[nodiscard]] Eigen::VectorXd compute_phi(const Eigen::VectorXd& f_values);

/// Proposes the global step: per-equation candidate dt_i (first- or
/// second-order depending on mode and history validity; negative two-point
/// brackets fall back to the one-point candidate per equation), then
/// dt = clamp(min_i dt_i, dt_min, dt_max). Ties pick the lowest index.
/// When every candidate is infinite the proposal is dt_max with
/// binding_index = kNoBinding.
[[nodiscard]] StepProposal propose_step(const DualHistory& history,
                                        const StepControlConfig& config);

/// Shifts the history after an accepted step: phi_prev <- phi_curr,
/// phi_curr <- new_phi; valid[i] becomes true exactly where both entries
/// are finite.
[[nodiscard]] DualHistory advance_history(DualHistory history,
                                          const Eigen::VectorXd& new_phi);

/// Discards the previous sample (disturbances invalidate it): phi_prev
/// absent, all valid flags false, phi_curr retained. Idempotent.
[[nodiscard]] DualHistory reset_history(DualHistory history);

}  // namespace qstep
