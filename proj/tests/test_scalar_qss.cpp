#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qstep/errors.hpp"
#include "qstep/scalar_qss.hpp"

namespace {

using namespace qstep;

constexpr double kLambda = -0.6;

ScalarQssConfig decay_config(double dq) {
  ScalarQssConfig config;
  config.dq = dq;
  config.x0 = 0.1;
  config.horizon = 20.0;
  config.f = [](double x) { return kLambda * x; };
  return config;
}

double mean(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

/// Mean relative timing error restricted to events with |x| >= cutoff,
/// where the crossing-time ratio is resolved well above rounding noise.
double windowed_timing_error(const ScalarQssTrace& trace, double cutoff) {
  double sum = 0.0;
  int count = 0;
  for (size_t k = 0; k + 1 < trace.events.size(); ++k) {
    const auto& event = trace.events[k];
    if (event.clamped || std::abs(event.x) < cutoff) continue;
    const auto dt_star = exact_crossing_time(event.x, trace.dq, kLambda);
    if (!dt_star) continue;
    sum += std::abs(event.dt - *dt_star) / *dt_star;
    ++count;
  }
  REQUIRE(count > 0);
  return sum / count;
}

double regression_slope(const std::vector<double>& xs,
                        const std::vector<double>& ys) {
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("first-order steps on the decay equation match hand arithmetic") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.01));
  REQUIRE(trace.events.size() >= 3);

  CHECK(trace.events[0].t == 0.0);
  CHECK(trace.events[0].x == 0.1);
  // dt_0 = dq / |f(0.1)| = 0.01 / 0.06
  CHECK(trace.events[0].dt == doctest::Approx(0.166666667).epsilon(1e-8));
  CHECK_FALSE(trace.events[0].clamped);

  CHECK(trace.events[1].x == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(trace.events[1].dt == doctest::Approx(0.185185185).epsilon(1e-8));
  CHECK(trace.events[2].x == doctest::Approx(0.08).epsilon(1e-12));
  CHECK(trace.terminated_by == Termination::horizon);
}

TEST_CASE("trace invariants: chained times, quantum-sized unclamped moves") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.01));
  for (size_t k = 0; k + 1 < trace.events.size(); ++k) {
    CHECK(trace.events[k + 1].t ==
          doctest::Approx(trace.events[k].t + trace.events[k].dt)
              .epsilon(1e-12));
    if (!trace.events[k].clamped) {
      CHECK(std::abs(trace.events[k + 1].x - trace.events[k].x) ==
            doctest::Approx(0.01).epsilon(1e-12));
    }
  }
  CHECK(trace.events.back().t == 20.0);
  CHECK(trace.events.back().dt == 0.0);
}

TEST_CASE("zero derivative produces a single segment to the horizon") {
  ScalarQssConfig config = decay_config(0.01);
  config.f = [](double) { return 0.0; };
  const ScalarQssTrace trace = qss1_simulate(config);
  REQUIRE(trace.events.size() == 2);
  CHECK(trace.events[0].dt == 20.0);
  CHECK(trace.events[1].t == 20.0);
  CHECK(trace.events[1].x == 0.1);
  CHECK(trace.terminated_by == Termination::steady_state);
}

TEST_CASE("oversized quantum overshoots, oscillates, and fails to decay") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.051));
  REQUIRE(trace.events.size() >= 3);
  CHECK(trace.events[1].x == doctest::Approx(0.049).epsilon(1e-12));
  CHECK(trace.events[0].dt == doctest::Approx(0.85).epsilon(1e-9));
  CHECK(trace.events[2].x == doctest::Approx(-0.002).epsilon(1e-9));
  CHECK(trace.events[1].dt == doctest::Approx(1.7346939).epsilon(1e-6));

  bool sign_change = false;
  for (size_t k = 1; k < trace.events.size(); ++k) {
    if (trace.events[k].x * trace.events[k - 1].x < 0.0) sign_change = true;
  }
  CHECK(sign_change);

  const double x_final = sample_trace(trace, 20.0);
  CHECK(x_final == doctest::Approx(0.0188984).epsilon(1e-4));
  CHECK(std::abs(x_final) >= 0.01);  // the exact solution is ~6e-7 here
}

TEST_CASE("exact crossing time: decay, growth, and no-crossing cases") {
  SUBCASE("decay from above the quantum") {
    const auto dt = exact_crossing_time(0.1, 0.01, -0.6);
    REQUIRE(dt.has_value());
    // (1/0.6) ln(0.1 / 0.09)
    CHECK(*dt == doctest::Approx(0.175600859).epsilon(1e-8));
  }
  SUBCASE("growth") {
    const auto dt = exact_crossing_time(0.1, 0.01, 0.5);
    REQUIRE(dt.has_value());
    // (1/0.5) ln(0.11 / 0.1)
    CHECK(*dt == doctest::Approx(2.0 * std::log(1.1)).epsilon(1e-12));
  }
  SUBCASE("negative state mirrors positive") {
    const auto neg = exact_crossing_time(-0.1, 0.01, -0.6);
    const auto pos = exact_crossing_time(0.1, 0.01, -0.6);
    REQUIRE(neg.has_value());
    CHECK(*neg == *pos);
  }
  SUBCASE("no crossing") {
    CHECK_FALSE(exact_crossing_time(0.1, 0.01, 0.0).has_value());
    CHECK_FALSE(exact_crossing_time(0.0, 0.01, -0.6).has_value());
    // decay asymptote reached before the quantum is consumed
    CHECK_FALSE(exact_crossing_time(0.009, 0.01, -0.6).has_value());
    CHECK_FALSE(exact_crossing_time(0.01, 0.01, -0.6).has_value());
  }
}

TEST_CASE("first-step timing error against the analytic crossing") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.01));
  const auto errors = timing_error_series(trace, kLambda);
  REQUIRE_FALSE(errors.empty());
  CHECK(errors[0] == doctest::Approx(0.050878).epsilon(1e-4));
}

TEST_CASE("second-order variant: first step falls back to first order") {
  const ScalarQssTrace qss1 = qss1_simulate(decay_config(0.01));
  const ScalarQssTrace ab2 = ab2_scalar_simulate(decay_config(0.01));
  CHECK(ab2.events[0].dt == qss1.events[0].dt);  // bit-identical fallback
  // dt_1 = dq (1.5 phi_1 - 0.5 phi_0) = 0.01 (1.5/0.054 - 0.5/0.06)
  CHECK(ab2.events[1].dt == doctest::Approx(0.194444444).epsilon(1e-8));
}

TEST_CASE("second-order variant beats first order on mean timing error") {
  const ScalarQssTrace qss1 = qss1_simulate(decay_config(0.001));
  const ScalarQssTrace ab2 = ab2_scalar_simulate(decay_config(0.001));
  const double err1 = mean(timing_error_series(qss1, kLambda));
  const double err2 = mean(timing_error_series(ab2, kLambda));
  CHECK(err2 < err1);
}

TEST_CASE("timing-error order: slopes near 1 (first) and 2 (second order)") {
  const std::vector<double> dqs = {0.01, 0.005, 0.0025, 0.00125};
  std::vector<double> log_dq, log_err1, log_err2;
  for (double dq : dqs) {
    log_dq.push_back(std::log(dq));
    log_err1.push_back(
        std::log(windowed_timing_error(qss1_simulate(decay_config(dq)), 0.02)));
    log_err2.push_back(std::log(
        windowed_timing_error(ab2_scalar_simulate(decay_config(dq)), 0.02)));
  }
  const double slope1 = regression_slope(log_dq, log_err1);
  const double slope2 = regression_slope(log_dq, log_err2);
  CHECK(slope1 == doctest::Approx(1.0).epsilon(0.3));
  CHECK(slope2 == doctest::Approx(2.0).epsilon(0.3 / 2.0));
}

TEST_CASE("a collapsing derivative floors the step and resets the history") {
  // phi jumps 1000 -> 0.1 between the first two events, making the two-point
  // extrapolation negative; the step floors at dt_min and the next step must
  // use the first-order rule (0.002), not the two-point one (0.0025).
  ScalarQssConfig config;
  config.dq = 0.01;
  config.x0 = 0.1;
  config.horizon = 20.0;
  config.f = [](double x) {
    if (x >= 0.095) return -0.001;
    if (x >= 0.089995) return -10.0;
    return -5.0;
  };
  const ScalarQssTrace trace = ab2_scalar_simulate(config);
  REQUIRE(trace.events.size() >= 4);
  CHECK(trace.events[0].dt == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(trace.events[1].dt == 1e-6);
  CHECK(trace.events[1].clamped);
  CHECK(trace.events[2].dt == doctest::Approx(0.002).epsilon(1e-12));
}

TEST_CASE("step floor and cap are applied and flagged") {
  SUBCASE("cap") {
    ScalarQssConfig config = decay_config(0.01);
    config.dt_max = 0.05;  // below dq/|f(x0)| = 0.1667
    const ScalarQssTrace trace = qss1_simulate(config);
    CHECK(trace.events[0].dt == 0.05);
    CHECK(trace.events[0].clamped);
  }
  SUBCASE("floor") {
    ScalarQssConfig config;
    config.dq = 1e-3;
    config.x0 = 1.0;
    config.horizon = 1e-5;  // short: every step sits at the floor
    config.f = [](double x) { return -1e9 * x; };
    const ScalarQssTrace trace = qss1_simulate(config);
    CHECK(trace.events[0].dt == 1e-6);
    CHECK(trace.events[0].clamped);
  }
}

TEST_CASE("piecewise-linear sampling is exact between events and clips") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.01));
  CHECK(sample_trace(trace, 0.0) == 0.1);
  const double t_mid = trace.events[0].dt / 2.0;
  const double expected = 0.1 + (kLambda * 0.1) * t_mid;
  CHECK(sample_trace(trace, t_mid) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(sample_trace(trace, -5.0) == 0.1);                       // clipped low
  CHECK(sample_trace(trace, 25.0) == trace.events.back().x);     // clipped high
}

TEST_CASE("configuration and derivative errors are rejected") {
  SUBCASE("non-positive quantum") {
    ScalarQssConfig config = decay_config(0.0);
    CHECK_THROWS_AS((void)qss1_simulate(config), DataError);
  }
  SUBCASE("non-positive horizon") {
    ScalarQssConfig config = decay_config(0.01);
    config.horizon = 0.0;
    CHECK_THROWS_AS((void)qss1_simulate(config), DataError);
  }
  SUBCASE("missing derivative") {
    ScalarQssConfig config = decay_config(0.01);
    config.f = nullptr;
    CHECK_THROWS_AS((void)qss1_simulate(config), DataError);
  }
  SUBCASE("non-finite derivative") {
    ScalarQssConfig config = decay_config(0.01);
    config.f = [](double) { return std::nan(""); };
    CHECK_THROWS_AS((void)qss1_simulate(config), NonFiniteValue);
  }
  SUBCASE("empty timing series") {
    ScalarQssConfig config = decay_config(0.01);
    config.f = [](double) { return 0.0; };  // single clamped segment
    const ScalarQssTrace trace = qss1_simulate(config);
    CHECK_THROWS_AS((void)timing_error_series(trace, kLambda), EmptySeries);
  }
}

TEST_CASE("trace export writes one row per event plus a header") {
  const ScalarQssTrace trace = qss1_simulate(decay_config(0.01));
  const auto path =
      std::filesystem::temp_directory_path() / "qstep_scalar_trace_test.csv";
  export_scalar_trace(trace, kLambda, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == trace.events.size() + 1);
  CHECK(lines[0] == "k,t_k,x_k,dt_k,dt_star_k,rel_err_k");
  CHECK(lines[1].substr(0, 4) == "0,0,");
  std::filesystem::remove(path);
}
