// qstep: quantized-step integration toolkit CLI.
//
// Subcommands:
//   bench    run a benchmark matrix file (timings + errors vs reference)
//   scalar   test-equation studies across quanta (trace/timing CSVs)
//   run      integrate a single scenario with one solver configuration
//   compare  error metrics between two trajectory CSVs

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "qstep/bench.hpp"
#include "qstep/csv.hpp"
#include "qstep/errors.hpp"
#include "qstep/power_model.hpp"
#include "qstep/trapezoidal.hpp"

namespace {

using qstep::DriverMode;

DriverMode mode_from_string(const std::string& text) {
  if (text == "fixed") return DriverMode::fixed_dt;
  if (text == "qss1") return DriverMode::qss1_sync;
  if (text == "ab2") return DriverMode::qss_ab2;
  if (text == "ab2-ad") return DriverMode::qss_ab2_adaptive;
  throw qstep::DataError(fmt::format(
      "unknown mode '{}' (expected fixed, qss1, ab2, or ab2-ad)", text));
}

int run_bench(const std::string& matrix_file, const std::string& out_override,
              int reps_override) {
  qstep::BenchmarkMatrix matrix = qstep::parse_matrix_file(matrix_file);
  if (!out_override.empty()) matrix.out_dir = out_override;
  if (reps_override > 0) matrix.reps = reps_override;
  if (matrix.reps < 3) {
    throw qstep::DataError("timing repetitions must be >= 3");
  }
  const qstep::BenchReport report = qstep::run_matrix(matrix);
  fmt::print("{}", report.table());
  fmt::print("results written to {}\n",
             (matrix.out_dir / "results.csv").string());
  return report.failures();
}

int run_scalar(const std::vector<double>& dqs, const std::string& out_dir) {
  qstep::run_scalar_study(
      dqs, {qstep::ScalarMethod::qss1, qstep::ScalarMethod::ab2}, out_dir);
  fmt::print("scalar study written to {} ({} quanta x 2 methods)\n", out_dir,
             dqs.size());
  return 0;
}

int run_single(const std::string& scenario_file, const std::string& model_override,
               const std::string& mode_text, double dq, double dt, double tol,
               double alpha, double beta, double dq_max, double dq_init,
               const std::string& out_dir) {
  qstep::ScenarioFileData scenario = qstep::parse_scenario_file(scenario_file);
  if (!model_override.empty()) scenario.model_file = model_override;
  qstep::ScenarioInstance instance = qstep::instantiate_scenario(scenario);

  qstep::StepSourceSpec source;
  source.mode = mode_from_string(mode_text);
  source.dt_min = scenario.dt_min;
  source.dt_max = scenario.dt_max;
  source.reset_controller_at_events = scenario.reset_controller_at_events;
  if (dt > 0) source.dt_fixed = dt;
  if (dq > 0) source.dq = dq;
  if (tol > 0) source.controller.tol = tol;
  if (alpha > 0) source.controller.alpha = alpha;
  if (beta >= 0) source.controller.beta = beta;
  if (dq_max > 0) source.controller.dq_max = dq_max;
  if (dq_init > 0) source.controller.dq_init = dq_init;

  const qstep::Trajectory trajectory =
      qstep::simulate(*instance.model.system, instance.model.initial,
                      instance.run, source);

  std::filesystem::create_directories(out_dir);
  const auto traj_path = std::filesystem::path(out_dir) / "trajectory.csv";
  qstep::export_trajectory_csv(trajectory, traj_path);
  fmt::print("{} accepted steps to t = {:.6g}; trajectory written to {}\n",
             trajectory.accepted_steps(), trajectory.records.back().t,
             traj_path.string());
  if (trajectory.adaptive()) {
    const auto quantum_path =
        std::filesystem::path(out_dir) / "quantum_trace.csv";
    qstep::emit_quantum_trace(trajectory, quantum_path);
    fmt::print("quantum trace written to {}\n", quantum_path.string());
  }
  return 0;
}

int run_compare(const std::string& candidate_file,
                const std::string& reference_file, int machine) {
  const qstep::Trajectory candidate =
      qstep::read_trajectory_csv(candidate_file);
  const qstep::Trajectory reference =
      qstep::read_trajectory_csv(reference_file);
  const double mean = qstep::avg_error(candidate, reference, machine);

  // Max deviation on the reference grid, candidate linearly interpolated.
  const Eigen::Index column = 2 * machine + 1;
  const auto& cand = candidate.records;
  double max_dev = 0.0;
  size_t seg = 0;
  for (const auto& ref_rec : reference.records) {
    const double t = std::clamp(ref_rec.t, cand.front().t, cand.back().t);
    while (seg + 2 < cand.size() && cand[seg + 1].t < t) ++seg;
    const auto& lo = cand[seg];
    const auto& hi = cand[seg + 1 < cand.size() ? seg + 1 : seg];
    const double span = hi.t - lo.t;
    const double w = span > 0.0 ? std::clamp((t - lo.t) / span, 0.0, 1.0) : 0.0;
    const double value = lo.x[column] + w * (hi.x[column] - lo.x[column]);
    max_dev = std::max(max_dev, std::abs(value - ref_rec.x[column]));
  }
  fmt::print("machine {}: mean |d_omega| = {:.6e}, max |d_omega| = {:.6e} "
             "({} vs {} records)\n",
             machine, mean, max_dev, candidate.records.size(),
             reference.records.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized-step integration toolkit"};
  app.require_subcommand(1);

  // --- bench ---
  std::string matrix_file, bench_out;
  int bench_reps = 0;
  auto* bench = app.add_subcommand("bench", "run a benchmark matrix file");
  bench->add_option("matrix", matrix_file, "matrix file")->required();
  bench->add_option("--out", bench_out, "output directory override");
  bench->add_option("--reps", bench_reps, "timing repetitions override (>= 3)");

  // --- scalar ---
  std::string scalar_out = "scalar_out";
  std::vector<double> scalar_dqs;
  auto* scalar =
      app.add_subcommand("scalar", "test-equation studies across quanta");
  scalar->add_option("--out", scalar_out, "output directory");
  scalar->add_option("--dq", scalar_dqs,
                     "quantum values (repeatable; default sweep)");

  // --- run ---
  std::string scenario_file, model_override, mode_text = "ab2-ad";
  std::string run_out = "run_out";
  double dq = 0, dt = 0, tol = 0, alpha = 0, beta = -1, dq_max = 0, dq_init = 0;
  auto* run = app.add_subcommand("run", "integrate a single scenario");
  run->add_option("--scenario", scenario_file, "scenario file")->required();
  run->add_option("--model", model_override, "model file override");
  run->add_option("--mode", mode_text, "fixed | qss1 | ab2 | ab2-ad");
  run->add_option("--dq", dq, "quantum (qss1/ab2 modes)");
  run->add_option("--dt", dt, "fixed step (fixed mode)");
  run->add_option("--tol", tol, "adaptive: timing-error tolerance");
  run->add_option("--alpha", alpha, "adaptive: proportional exponent");
  run->add_option("--beta", beta, "adaptive: integral exponent");
  run->add_option("--dq-max", dq_max, "adaptive: quantum ceiling");
  run->add_option("--dq-init", dq_init, "adaptive: starting quantum");
  run->add_option("--out", run_out, "output directory");

  // --- compare ---
  std::string cand_file, ref_file;
  int machine = 0;
  auto* compare =
      app.add_subcommand("compare", "error metrics between two trajectories");
  compare->add_option("candidate", cand_file, "candidate trajectory CSV")
      ->required();
  compare->add_option("reference", ref_file, "reference trajectory CSV")
      ->required();
  compare->add_option("--machine", machine, "machine index to score");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench) return run_bench(matrix_file, bench_out, bench_reps);
    if (*scalar) {
      if (scalar_dqs.empty()) {
        scalar_dqs = {0.01, 0.051, 0.005, 0.0025, 0.00125, 0.001};
      }
      return run_scalar(scalar_dqs, scalar_out);
    }
    if (*run) {
      return run_single(scenario_file, model_override, mode_text, dq, dt, tol,
                        alpha, beta, dq_max, dq_init, run_out);
    }
    if (*compare) return run_compare(cand_file, ref_file, machine);
  } catch (const std::exception& failure) {
    fmt::print(stderr, "error: {}\n", failure.what());
    return 1;
  }
  return 0;
}
