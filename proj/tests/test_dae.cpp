#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "qstep/dae.hpp"
#include "qstep/errors.hpp"

namespace {

using namespace qstep;

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double value : values) v[i++] = value;
  return v;
}

/// x' = a x + b y, 0 = y - c x: the smallest coupled test system. `c` is
/// mutable so disturbance events have something to change.
class LinearSystem : public ExplicitDaeSystem {
 public:
  LinearSystem(double a, double b, double c) : a_(a), b_(b), c_(c) {}

  int n_states() const override { return 1; }
  int n_algebraic() const override { return 1; }
  void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& f_out) const override {
    f_out.resize(1);
    f_out[0] = a_ * x[0] + b_ * y[0];
  }
  void eval_g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& g_out) const override {
    g_out.resize(1);
    g_out[0] = y[0] - c_ * x[0];
  }

  void set_coupling(double c) { c_ = c; }

 private:
  double a_, b_, c_;
};

/// Constraint with no dependence on y: the Newton matrix is exactly
/// singular whenever the residual is nonzero.
class DegenerateSystem : public ExplicitDaeSystem {
 public:
  int n_states() const override { return 1; }
  int n_algebraic() const override { return 1; }
  void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd&,
              Eigen::VectorXd& f_out) const override {
    f_out.resize(1);
    f_out[0] = -x[0];
  }
  void eval_g(const Eigen::VectorXd& x, const Eigen::VectorXd&,
              Eigen::VectorXd& g_out) const override {
    g_out.resize(1);
    g_out[0] = x[0] - 0.5;  // independent of y
  }
};

/// Cubic constraint: Newton from a far guess needs several iterations,
/// which makes iteration budgets observable.
class CubicSystem : public ExplicitDaeSystem {
 public:
  int n_states() const override { return 1; }
  int n_algebraic() const override { return 1; }
  void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd&,
              Eigen::VectorXd& f_out) const override {
    f_out.resize(1);
    f_out[0] = -x[0];
  }
  void eval_g(const Eigen::VectorXd&, const Eigen::VectorXd& y,
              Eigen::VectorXd& g_out) const override {
    g_out.resize(1);
    g_out[0] = y[0] * y[0] * y[0] - 8.0;
  }
};

/// Nonlinear 2+2 system with hand-derived Jacobians, used to cross-check
/// the finite-difference fallback against analytic derivatives.
class NonlinearSystem : public ExplicitDaeSystem {
 public:
  int n_states() const override { return 2; }
  int n_algebraic() const override { return 2; }

  void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& f_out) const override {
    f_out.resize(2);
    f_out[0] = std::sin(x[0]) * y[0] - 0.3 * x[1];
    f_out[1] = x[0] * x[1] + std::cos(y[1]);
  }
  void eval_g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& g_out) const override {
    g_out.resize(2);
    g_out[0] = y[0] - 0.5 * x[0] * x[0];
    g_out[1] = y[1] - std::exp(0.1 * x[1]) + 1.0;
  }

  Eigen::MatrixXd jac_fx(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override {
    Eigen::MatrixXd jac(2, 2);
    jac << std::cos(x[0]) * y[0], -0.3, x[1], x[0];
    return jac;
  }
  Eigen::MatrixXd jac_fy(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override {
    Eigen::MatrixXd jac(2, 2);
    jac << std::sin(x[0]), 0.0, 0.0, -std::sin(y[1]);
    return jac;
  }
  Eigen::MatrixXd jac_gx(const Eigen::VectorXd& x,
                         const Eigen::VectorXd&) const override {
    Eigen::MatrixXd jac(2, 2);
    jac << -x[0], 0.0, 0.0, -0.1 * std::exp(0.1 * x[1]);
    return jac;
  }
  Eigen::MatrixXd jac_gy(const Eigen::VectorXd&,
                         const Eigen::VectorXd&) const override {
    return Eigen::MatrixXd::Identity(2, 2);
  }
};

}  // namespace

TEST_CASE("consistent initialization solves the algebraic constraint") {
  LinearSystem system(-0.5, 0.1, 2.0);  // y = 2x
  const SystemState state = consistent_init(system, vec({0.1}), vec({5.0}));
  CHECK(state.t == 0.0);
  CHECK(state.x[0] == 0.1);
  // The solve stops at residual <= 1e-8 and dg/dy = 1 here, so 1e-8 is the
  // guaranteed accuracy of y itself.
  CHECK(state.y[0] == doctest::Approx(0.2).epsilon(1e-8));
  const Eigen::VectorXd residual = system.g_at(state.x, state.y);
  CHECK(residual.lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("dimension mismatches are rejected up front") {
  LinearSystem system(-0.5, 0.1, 2.0);
  CHECK_THROWS_AS((void)consistent_init(system, vec({0.1, 0.2}), vec({0.0})),
                  DataError);
  CHECK_THROWS_AS((void)consistent_init(system, vec({0.1}), vec({0.0, 0.0})),
                  DataError);
}

TEST_CASE("a y-independent constraint raises SingularJacobian") {
  DegenerateSystem system;
  CHECK_THROWS_AS(
      (void)consistent_init(system, vec({0.2}), vec({1.0})),
      SingularJacobian);
}

TEST_CASE("an exhausted iteration budget raises NonConvergence with counts") {
  CubicSystem system;
  try {
    (void)consistent_init(system, vec({1.0}), vec({100.0}), 1e-10, 3);
    FAIL("expected NonConvergence");
  } catch (const NonConvergence& failure) {
    CHECK(failure.iterations == 3);
    CHECK(failure.residual > 0.0);
  }
  // With a real budget the same solve lands on the root y = 2.
  const SystemState state =
      consistent_init(system, vec({1.0}), vec({100.0}), 1e-10, 50);
  CHECK(state.y[0] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("events re-solve the algebraics while holding the states") {
  LinearSystem system(-0.5, 0.1, 2.0);
  SystemState state = consistent_init(system, vec({0.1}), vec({0.0}));
  state.t = 3.25;

  DisturbanceEvent event;
  event.time = 3.25;
  event.label = "double the coupling";
  event.action = [](ExplicitDaeSystem& target) {
    dynamic_cast<LinearSystem&>(target).set_coupling(4.0);
  };
  const SystemState after = apply_event(system, event, state);
  CHECK(after.t == 3.25);
  CHECK(after.x[0] == 0.1);  // states are continuous across events
  CHECK(after.y[0] == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("finite differences recover known derivatives") {
  SUBCASE("scalar square function") {
    const auto jac = fd_jacobian(
        [](const Eigen::VectorXd& p) {
          return Eigen::VectorXd::Constant(1, p[0] * p[0]);
        },
        vec({3.0}));
    CHECK(jac(0, 0) == doctest::Approx(6.0).epsilon(1e-6));
  }
  SUBCASE("linear maps are recovered almost exactly") {
    std::mt19937 rng(20260501);
    std::uniform_real_distribution<double> entry(-2.0, 2.0);
    Eigen::MatrixXd a(3, 3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a(i, j) = entry(rng);
    }
    const auto jac = fd_jacobian(
        [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return a * p; },
        vec({0.3, -1.2, 0.7}));
    CHECK((jac - a).lpNorm<Eigen::Infinity>() <= 1e-7);
  }
  SUBCASE("non-finite evaluations are reported") {
    CHECK_THROWS_AS(
        (void)fd_jacobian(
            [](const Eigen::VectorXd& p) {
              return Eigen::VectorXd::Constant(1, std::sqrt(p[0]));
            },
            vec({0.0})),  // perturbing below zero yields NaN
        NonFiniteValue);
  }
}

TEST_CASE("analytic Jacobians agree with finite differences everywhere") {
  NonlinearSystem system;
  std::mt19937 rng(20260502);
  std::uniform_real_distribution<double> coord(-1.5, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd x = vec({coord(rng), coord(rng)});
    // Use a consistent algebraic point, as the integrator would.
    Eigen::VectorXd y(2);
    y[0] = 0.5 * x[0] * x[0];
    y[1] = std::exp(0.1 * x[1]) - 1.0;

    const auto fd_fx = fd_jacobian(
        [&](const Eigen::VectorXd& p) { return system.f_at(p, y); }, x);
    const auto fd_fy = fd_jacobian(
        [&](const Eigen::VectorXd& p) { return system.f_at(x, p); }, y);
    const auto fd_gx = fd_jacobian(
        [&](const Eigen::VectorXd& p) { return system.g_at(p, y); }, x);
    const auto fd_gy = fd_jacobian(
        [&](const Eigen::VectorXd& p) { return system.g_at(x, p); }, y);

    CHECK((system.jac_fx(x, y) - fd_fx).lpNorm<Eigen::Infinity>() <= 1e-5);
    CHECK((system.jac_fy(x, y) - fd_fy).lpNorm<Eigen::Infinity>() <= 1e-5);
    CHECK((system.jac_gx(x, y) - fd_gx).lpNorm<Eigen::Infinity>() <= 1e-5);
    CHECK((system.jac_gy(x, y) - fd_gy).lpNorm<Eigen::Infinity>() <= 1e-5);
  }
}

TEST_CASE("the default Jacobians are the finite-difference ones") {
  LinearSystem system(-0.5, 0.1, 2.0);
  const Eigen::VectorXd x = vec({0.3});
  const Eigen::VectorXd y = vec({0.6});
  CHECK(system.jac_fx(x, y)(0, 0) == doctest::Approx(-0.5).epsilon(1e-7));
  CHECK(system.jac_fy(x, y)(0, 0) == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(system.jac_gx(x, y)(0, 0) == doctest::Approx(-2.0).epsilon(1e-7));
  CHECK(system.jac_gy(x, y)(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("evaluation wrappers reject non-finite results") {
  class NanSystem : public ExplicitDaeSystem {
   public:
    int n_states() const override { return 1; }
    int n_algebraic() const override { return 1; }
    void eval_f(const Eigen::VectorXd&, const Eigen::VectorXd&,
                Eigen::VectorXd& f_out) const override {
      f_out = Eigen::VectorXd::Constant(1, std::nan(""));
    }
    void eval_g(const Eigen::VectorXd&, const Eigen::VectorXd&,
                Eigen::VectorXd& g_out) const override {
      g_out = Eigen::VectorXd::Constant(1, 0.0);
    }
  };
  NanSystem system;
  CHECK_THROWS_AS((void)system.f_at(vec({1.0}), vec({1.0})), NonFiniteValue);
  CHECK(system.g_at(vec({1.0}), vec({1.0}))[0] == 0.0);
}
