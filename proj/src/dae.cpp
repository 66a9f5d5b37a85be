#include "qstep/dae.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "qstep/errors.hpp"

namespace qstep {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NonFiniteValue(fmt::format("{}[{}] is not finite ({})", what, i, v[i]));
    }
  }
}

/// Newton solve of g(x, y) = 0 in y with x fixed; shared by
/// consistent_init and apply_event.
Eigen::VectorXd solve_algebraic(const ExplicitDaeSystem& system,
                                const Eigen::VectorXd& x,
                                Eigen::VectorXd y, double tol, int max_iters) {
  const int m = system.n_algebraic();
  if (m == 0) return y;

  Eigen::VectorXd g(m);
  double residual = 0.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    system.eval_g(x, y, g);
    check_finite(g, "g");
    residual = g.lpNorm<Eigen::Infinity>();
    if (residual <= tol) return y;

    const Eigen::MatrixXd jac = system.jac_gy(x, y);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0 || smax / smin > 1e12) {
      throw SingularJacobian(
          fmt::format("algebraic Jacobian is numerically singular "
                      "(condition estimate {:.3e})",
                      smin > 0.0 ? smax / smin
                                 : std::numeric_limits<double>::infinity()));
    }
    y -= svd.solve(g);
  }
  throw NonConvergence(
      fmt::format("algebraic solve stalled at residual {:.3e} after {} iterations",
                  residual, max_iters),
      max_iters, residual);
}

}  // namespace

Eigen::MatrixXd ExplicitDaeSystem::jac_fx(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  return fd_jacobian(
      [&](const Eigen::VectorXd& xp) {
        Eigen::VectorXd out(n_states());
        eval_f(xp, y, out);
        return out;
      },
      x);
}

Eigen::MatrixXd ExplicitDaeSystem::jac_fy(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  return fd_jacobian(
      [&](const Eigen::VectorXd& yp) {
        Eigen::VectorXd out(n_states());
        eval_f(x, yp, out);
        return out;
      },
      y);
}

Eigen::MatrixXd ExplicitDaeSystem::jac_gx(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  return fd_jacobian(
      [&](const Eigen::VectorXd& xp) {
        Eigen::VectorXd out(n_algebraic());
        eval_g(xp, y, out);
        return out;
      },
      x);
}

Eigen::MatrixXd ExplicitDaeSystem::jac_gy(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  return fd_jacobian(
      [&](const Eigen::VectorXd& yp) {
        Eigen::VectorXd out(n_algebraic());
        eval_g(x, yp, out);
        return out;
      },
      y);
}

Eigen::VectorXd ExplicitDaeSystem::f_at(const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& y) const {
  Eigen::VectorXd out(n_states());
  eval_f(x, y, out);
  check_finite(out, "f");
  return out;
}

Eigen::VectorXd ExplicitDaeSystem::g_at(const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& y) const {
  Eigen::VectorXd out(n_algebraic());
  eval_g(x, y, out);
  check_finite(out, "g");
  return out;
}

Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& evaluator,
    const Eigen::VectorXd& point, double scale) {
  Eigen::VectorXd p = point;
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < point.size(); ++j) {
    const double h = std::max(std::abs(point[j]), 1.0) * scale;
    p[j] = point[j] + h;
    const Eigen::VectorXd hi = evaluator(p);
    p[j] = point[j] - h;
    const Eigen::VectorXd lo = evaluator(p);
    p[j] = point[j];
    if (jac.size() == 0) jac.resize(hi.size(), point.size());
    jac.col(j) = (hi - lo) / (2.0 * h);
    for (Eigen::Index i = 0; i < jac.rows(); ++i) {
      if (!std::isfinite(jac(i, j))) {
        throw NonFiniteValue(fmt::format(
            "fd_jacobian: non-finite entry at row {}, column {}", i, j));
      }
    }
  }
  if (jac.size() == 0) jac.resize(evaluator(point).size(), 0);
  return jac;
}

SystemState consistent_init(const ExplicitDaeSystem& system,
                            const Eigen::VectorXd& x0,
                            const Eigen::VectorXd& y_guess, double tol,
                            int max_iters) {
  if (x0.size() != system.n_states() ||
      y_guess.size() != system.n_algebraic()) {
    throw DataError("consistent_init: dimension mismatch");
  }
  SystemState state;
  state.t = 0.0;
  state.x = x0;
  state.y = solve_algebraic(system, x0, y_guess, tol, max_iters);
  return state;
}

SystemState apply_event(ExplicitDaeSystem& system,
                        const DisturbanceEvent& event,
                        const SystemState& state, double tol, int max_iters) {
  if (event.action) event.action(system);
  SystemState next = state;
  next.y = solve_algebraic(system, state.x, state.y, tol, max_iters);
  return next;
}

}  // namespace qstep
