#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qstep/power_model.hpp"
#include "qstep/trapezoidal.hpp"

namespace qstep {

/// Raw disturbance description from a scenario file. Turned into concrete
/// events against a freshly built model by instantiate_scenario, so that
/// every timing repetition starts from pristine network matrices.
struct FaultDescription {
  int bus = 0;
  double t_on = 1.0;
  double duration = 0.08;
  std::string trip_line;
  double shunt_conductance = 1e6;
};

struct LoadLossDescription {
  std::vector<int> buses;
  double delta_p = 0.0;
  double delta_q = 0.0;
  double t_on = 1.0;
};

/// Parsed scenario file: which model to load, how long to run, which
/// disturbances to schedule, and the step-control bounds shared by every
/// solver configuration run against it.
struct ScenarioFileData {
  std::filesystem::path model_file;  ///< resolved against the scenario dir
  double horizon = 20.0;
  std::string machine_id;  ///< machine scored by avg_error ("" = first)
  double dt_min = 1e-6;
  double dt_max = 0.25;
  bool reset_controller_at_events = true;
  std::vector<FaultDescription> faults;
  std::vector<LoadLossDescription> load_losses;
};

/// Parses a scenario file (key/value lines plus an [event] section; see
/// README for the schema). Throws DataError on malformed input.
[[nodiscard]] ScenarioFileData parse_scenario_file(
    const std::filesystem::path& path);

/// A freshly built model plus its disturbance schedule. Disturbances mutate
/// the model, so each simulation run needs its own instance.
struct ScenarioInstance {
  BuiltModel model;
  ScenarioRun run;
  int machine = 0;  ///< index of the scored machine
};

[[nodiscard]] ScenarioInstance instantiate_scenario(
    const ScenarioFileData& scenario);

/// One solver configuration of a benchmark matrix. The step source already
/// carries the scenario-level dt bounds merged in at parse time.
struct MatrixRow {
  std::string name;
  StepSourceSpec source;
};

/// A benchmark matrix: one scenario, several solver configurations, timing
/// repetitions, and an output directory. The first row is always the
/// fixed-step reference that every other row's error is measured against.
struct BenchmarkMatrix {
  std::filesystem::path scenario_file;
  ScenarioFileData scenario;
  int reps = 3;  ///< timing repetitions (>= 3), excluding the warm-up run
  std::filesystem::path out_dir = "bench_out";
  std::vector<MatrixRow> rows;
};

/// Parses a matrix file and the scenario file it references. Throws
/// DataError if the first row is not a fixed-step reference, if reps < 3,
/// or on any malformed row.
[[nodiscard]] BenchmarkMatrix parse_matrix_file(
    const std::filesystem::path& path);

struct BenchRowResult {
  std::string config;
  bool failed = false;
  std::string failure;  ///< exception text when failed
  double wall_ms_median = 0.0;
  long long steps = 0;
  std::optional<double> error;  ///< empty for the reference row
};

struct BenchReport {
  std::vector<BenchRowResult> rows;

  [[nodiscard]] int failures() const;
  /// Space-aligned summary table (header + one line per row).
  [[nodiscard]] std::string table() const;
};

/// Runs every row of the matrix against fresh scenario instances: one
/// warm-up run (discarded) plus `reps` timed runs per row, wall-clock
/// measured around the integration only. Writes `results.csv` with columns
/// `config, wall_ms_median, steps, avg_error` and one `traj_<name>.csv`
/// per row under out_dir. A row that throws is marked failed and the
/// remaining rows still run.
[[nodiscard]] BenchReport run_matrix(const BenchmarkMatrix& matrix);

enum class ScalarMethod { qss1, ab2 };

/// Test-equation study (dx/dt = -0.6 x, x0 = 0.1, 20 s horizon): for each
/// quantum and method, writes the event trace and the per-event timing-error
/// series as CSV, plus the exact solution sampled at 1 ms for overlays.
void run_scalar_study(const std::vector<double>& dqs,
                      const std::vector<ScalarMethod>& methods,
                      const std::filesystem::path& out_dir);

/// Per-step record of how the quantum evolved during an adaptive run:
/// CSV columns `k, t_k, dq_k, sigma_k, dt_k`. Throws NotAdaptive for
/// trajectories from non-adaptive modes, which carry no quantum history.
void emit_quantum_trace(const Trajectory& trajectory,
                        const std::filesystem::path& path);

}  // namespace qstep
