#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace qstep {

/// One point of a differential-algebraic trajectory: states x (explicit
/// derivatives), algebraics y (implicit, g(x, y) = 0).
struct SystemState {
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Explicit-form DAE: x' = f(x, y), 0 = g(x, y). Jacobians default to
/// finite differences; models with cheap analytic derivatives override them.
/// Instances are mutable (disturbances change parameters) and must be
/// confined to one simulation at a time.
class ExplicitDaeSystem {
 public:
  virtual ~ExplicitDaeSystem() = default;

  [[nodiscard]] virtual int n_states() const = 0;
  [[nodiscard]] virtual int n_algebraic() const = 0;

  virtual void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      Eigen::VectorXd& f_out) const = 0;
  virtual void eval_g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      Eigen::VectorXd& g_out) const = 0;

  [[nodiscard]] virtual Eigen::MatrixXd jac_fx(const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& y) const;
  [[nodiscard]] virtual Eigen::MatrixXd jac_fy(const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& y) const;
  [[nodiscard]] virtual Eigen::MatrixXd jac_gx(const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& y) const;
  [[nodiscard]] virtual Eigen::MatrixXd jac_gy(const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& y) const;

  /// Allocating wrappers that also reject NaN/infinity in the result
  /// (throwing NonFiniteValue).
  [[nodiscard]] Eigen::VectorXd f_at(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& y) const;
  [[nodiscard]] Eigen::VectorXd g_at(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& y) const;
};

/// A scheduled parameter change. The action mutates the system in place;
/// concrete models supply typed factories (fault application, line trip,
/// load change) that build these.
struct DisturbanceEvent {
  double time = 0.0;
  std::string label;
  std::function<void(ExplicitDaeSystem&)> action;
};

/// Central-difference Jacobian of `evaluator` at `point`; the per-column
/// step is max(|component|, 1) * scale. Throws NonFiniteValue if the
/// evaluator produces NaN/infinity at a perturbed point.
[[nodiscard]] Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& evaluator,
    const Eigen::VectorXd& point, double scale = 1e-6);

/// Solves g(x0, y) = 0 for y by Newton from y_guess, holding x0 fixed.
/// Converged means infinity-norm residual <= tol. Throws
/// NonConvergence(iterations, residual) after max_iters, SingularJacobian
/// if dg/dy has condition estimate > 1e12.
[[nodiscard]] SystemState consistent_init(const ExplicitDaeSystem& system,
                                          const Eigen::VectorXd& x0,
                                          const Eigen::VectorXd& y_guess,
                                          double tol = 1e-8,
                                          int max_iters = 50);

/// Applies the event's parameter mutation, then re-solves the algebraic
/// equations with x held fixed (states are continuous across discrete
/// events). Returns the new consistent state at the same t.
[[nodiscard]] SystemState apply_event(ExplicitDaeSystem& system,
                                      const DisturbanceEvent& event,
                                      const SystemState& state,
                                      double tol = 1e-8, int max_iters = 50);

}  // namespace qstep
