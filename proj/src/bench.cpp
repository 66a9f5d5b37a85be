#include "qstep/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "qstep/csv.hpp"
#include "qstep/errors.hpp"
#include "qstep/scalar_qss.hpp"

namespace qstep {

namespace {

namespace fs = std::filesystem;

struct ParsedLine {
  std::vector<std::string> tokens;
  std::string where;
};

/// Reads a structured text file: strips '#' comments, skips blanks, and
/// returns whitespace-separated tokens per line with a file:line tag.
std::vector<ParsedLine> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open file '{}'", path.string()));
  std::vector<ParsedLine> lines;
  std::string raw;
  size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::stringstream ss(raw);
    ParsedLine line;
    std::string tok;
    while (ss >> tok) line.tokens.push_back(tok);
    if (line.tokens.empty()) continue;
    line.where = fmt::format("{}:{}", path.string(), line_no);
    lines.push_back(std::move(line));
  }
  return lines;
}

double to_number(const std::string& tok, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(fmt::format("{}: expected a number, found '{}'", where, tok));
  }
}

int to_int(const std::string& tok, const std::string& where) {
  try {
    size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(
        fmt::format("{}: expected an integer, found '{}'", where, tok));
  }
}

bool to_bool(const std::string& tok, const std::string& where) {
  if (tok == "true" || tok == "1") return true;
  if (tok == "false" || tok == "0") return false;
  throw DataError(
      fmt::format("{}: expected true or false, found '{}'", where, tok));
}

/// Splits "key=value" tokens into an ordered key/value list.
std::vector<std::pair<std::string, std::string>> split_pairs(
    const std::vector<std::string>& tokens, size_t first,
    const std::string& where) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (size_t i = first; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= tokens[i].size()) {
      throw DataError(
          fmt::format("{}: expected key=value, found '{}'", where, tokens[i]));
    }
    pairs.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
  }
  return pairs;
}

std::vector<int> split_int_list(const std::string& text,
                                const std::string& where) {
  std::vector<int> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(to_int(item, where));
  }
  if (out.empty()) {
    throw DataError(fmt::format("{}: expected a bus list, found '{}'", where, text));
  }
  return out;
}

DriverMode parse_mode(const std::string& tok, const std::string& where) {
  if (tok == "fixed") return DriverMode::fixed_dt;
  if (tok == "qss1") return DriverMode::qss1_sync;
  if (tok == "ab2") return DriverMode::qss_ab2;
  if (tok == "ab2-ad") return DriverMode::qss_ab2_adaptive;
  throw DataError(fmt::format(
      "{}: unknown mode '{}' (expected fixed, qss1, ab2, or ab2-ad)", where,
      tok));
}

std::string sanitize_name(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

ScenarioFileData parse_scenario_file(const fs::path& path) {
  ScenarioFileData scenario;
  bool in_events = false;
  bool have_model = false;
  for (const auto& line : read_lines(path)) {
    const auto& tok = line.tokens;
    if (tok[0] == "[event]") {
      in_events = true;
      continue;
    }
    if (tok[0].front() == '[') {
      throw DataError(
          fmt::format("{}: unknown section '{}'", line.where, tok[0]));
    }

    if (!in_events) {
      if (tok.size() != 2) {
        throw DataError(
            fmt::format("{}: expected 'key value'", line.where));
      }
      const std::string& key = tok[0];
      const std::string& value = tok[1];
      if (key == "model") {
        scenario.model_file = path.parent_path() / value;
        have_model = true;
      } else if (key == "horizon") {
        scenario.horizon = to_number(value, line.where);
      } else if (key == "machine") {
        scenario.machine_id = value;
      } else if (key == "dt_min") {
        scenario.dt_min = to_number(value, line.where);
      } else if (key == "dt_max") {
        scenario.dt_max = to_number(value, line.where);
      } else if (key == "reset_controller_at_events") {
        scenario.reset_controller_at_events = to_bool(value, line.where);
      } else {
        throw DataError(
            fmt::format("{}: unknown scenario key '{}'", line.where, key));
      }
      continue;
    }

    // [event] section
    if (tok[0] == "fault") {
      FaultDescription fault;
      bool have_bus = false, have_trip = false;
      for (const auto& [key, value] : split_pairs(tok, 1, line.where)) {
        if (key == "bus") {
          fault.bus = to_int(value, line.where);
          have_bus = true;
        } else if (key == "t") {
          fault.t_on = to_number(value, line.where);
        } else if (key == "duration") {
          fault.duration = to_number(value, line.where);
        } else if (key == "trip") {
          fault.trip_line = value;
          have_trip = true;
        } else if (key == "shunt") {
          fault.shunt_conductance = to_number(value, line.where);
        } else {
          throw DataError(
              fmt::format("{}: unknown fault key '{}'", line.where, key));
        }
      }
      if (!have_bus || !have_trip) {
        throw DataError(fmt::format(
            "{}: fault events need bus= and trip=", line.where));
      }
      scenario.faults.push_back(std::move(fault));
    } else if (tok[0] == "loadloss") {
      LoadLossDescription loss;
      bool have_buses = false;
      for (const auto& [key, value] : split_pairs(tok, 1, line.where)) {
        if (key == "buses") {
          loss.buses = split_int_list(value, line.where);
          have_buses = true;
        } else if (key == "t") {
          loss.t_on = to_number(value, line.where);
        } else if (key == "dp") {
          loss.delta_p = to_number(value, line.where);
        } else if (key == "dq") {
          loss.delta_q = to_number(value, line.where);
        } else {
          throw DataError(
              fmt::format("{}: unknown loadloss key '{}'", line.where, key));
        }
      }
      if (!have_buses) {
        throw DataError(
            fmt::format("{}: loadloss events need buses=", line.where));
      }
      scenario.load_losses.push_back(std::move(loss));
    } else {
      throw DataError(fmt::format(
          "{}: unknown event kind '{}' (expected fault or loadloss)",
          line.where, tok[0]));
    }
  }
  if (!have_model) {
    throw DataError(
        fmt::format("{}: scenario file needs a 'model' entry", path.string()));
  }
  if (!(scenario.horizon > 0.0)) {
    throw DataError(
        fmt::format("{}: horizon must be > 0", path.string()));
  }
  return scenario;
}

ScenarioInstance instantiate_scenario(const ScenarioFileData& scenario) {
  ScenarioInstance instance;
  instance.model = build_model(scenario.model_file);
  instance.run.horizon = scenario.horizon;
  for (const auto& fault : scenario.faults) {
    auto spec = make_fault_scenario(*instance.model.system, fault.bus,
                                    fault.t_on, fault.duration,
                                    fault.trip_line, fault.shunt_conductance);
    for (auto& event : spec.events) {
      instance.run.events.push_back(std::move(event));
    }
  }
  for (const auto& loss : scenario.load_losses) {
    auto spec = make_load_loss_scenario(*instance.model.system, loss.buses,
                                        loss.delta_p, loss.delta_q, loss.t_on);
    for (auto& event : spec.events) {
      instance.run.events.push_back(std::move(event));
    }
  }
  instance.machine =
      scenario.machine_id.empty()
          ? 0
          : instance.model.system->machine_index(scenario.machine_id);
  return instance;
}

// ---------------------------------------------------------------------------
// Matrix files
// ---------------------------------------------------------------------------

BenchmarkMatrix parse_matrix_file(const fs::path& path) {
  BenchmarkMatrix matrix;
  bool in_rows = false;
  bool have_scenario = false;
  std::vector<std::string> seen_names;
  for (const auto& line : read_lines(path)) {
    const auto& tok = line.tokens;
    if (tok[0] == "[row]") {
      in_rows = true;
      continue;
    }
    if (tok[0].front() == '[') {
      throw DataError(
          fmt::format("{}: unknown section '{}'", line.where, tok[0]));
    }

    if (!in_rows) {
      if (tok.size() != 2) {
        throw DataError(fmt::format("{}: expected 'key value'", line.where));
      }
      const std::string& key = tok[0];
      const std::string& value = tok[1];
      if (key == "scenario") {
        matrix.scenario_file = path.parent_path() / value;
        have_scenario = true;
      } else if (key == "reps") {
        matrix.reps = to_int(value, line.where);
      } else if (key == "out") {
        matrix.out_dir = value;
      } else {
        throw DataError(
            fmt::format("{}: unknown matrix key '{}'", line.where, key));
      }
      continue;
    }

    MatrixRow row;
    bool have_mode = false;
    std::map<std::string, std::string> extras;
    for (const auto& [key, value] : split_pairs(tok, 0, line.where)) {
      if (key == "name") {
        row.name = value;
      } else if (key == "mode") {
        row.source.mode = parse_mode(value, line.where);
        have_mode = true;
      } else {
        extras[key] = value;
      }
    }
    if (row.name.empty() || !have_mode) {
      throw DataError(
          fmt::format("{}: matrix rows need name= and mode=", line.where));
    }
    if (std::find(seen_names.begin(), seen_names.end(), row.name) !=
        seen_names.end()) {
      throw DataError(
          fmt::format("{}: duplicate row name '{}'", line.where, row.name));
    }
    seen_names.push_back(row.name);

    auto take = [&](const char* key) -> std::optional<double> {
      const auto it = extras.find(key);
      if (it == extras.end()) return std::nullopt;
      const double v = to_number(it->second, line.where);
      extras.erase(it);
      return v;
    };
    switch (row.source.mode) {
      case DriverMode::fixed_dt:
        if (const auto dt = take("dt")) row.source.dt_fixed = *dt;
        break;
      case DriverMode::qss1_sync:
      case DriverMode::qss_ab2:
        if (const auto dq = take("dq")) row.source.dq = *dq;
        break;
      case DriverMode::qss_ab2_adaptive: {
        auto& ctl = row.source.controller;
        if (const auto v = take("dq_init")) ctl.dq_init = *v;
        if (const auto v = take("tol")) ctl.tol = *v;
        if (const auto v = take("alpha")) ctl.alpha = *v;
        if (const auto v = take("beta")) ctl.beta = *v;
        if (const auto v = take("dq_max")) ctl.dq_max = *v;
        if (const auto v = take("dq_min")) ctl.dq_min = *v;
        break;
      }
    }
    if (!extras.empty()) {
      throw DataError(fmt::format("{}: key '{}' does not apply to this mode",
                                  line.where, extras.begin()->first));
    }
    matrix.rows.push_back(std::move(row));
  }

  if (!have_scenario) {
    throw DataError(
        fmt::format("{}: matrix file needs a 'scenario' entry", path.string()));
  }
  if (matrix.rows.empty()) {
    throw DataError(fmt::format("{}: matrix file has no rows", path.string()));
  }
  if (matrix.rows.front().source.mode != DriverMode::fixed_dt) {
    throw DataError(fmt::format(
        "{}: the first matrix row must be the fixed-step reference",
        path.string()));
  }
  if (matrix.reps < 3) {
    throw DataError(fmt::format(
        "{}: timing repetitions must be >= 3 for a meaningful median",
        path.string()));
  }

  matrix.scenario = parse_scenario_file(matrix.scenario_file);
  for (auto& row : matrix.rows) {
    row.source.dt_min = matrix.scenario.dt_min;
    row.source.dt_max = matrix.scenario.dt_max;
    row.source.reset_controller_at_events =
        matrix.scenario.reset_controller_at_events;
  }
  return matrix;
}

// ---------------------------------------------------------------------------
// Matrix execution
// ---------------------------------------------------------------------------

int BenchReport::failures() const {
  return static_cast<int>(
      std::count_if(rows.begin(), rows.end(),
                    [](const BenchRowResult& r) { return r.failed; }));
}

std::string BenchReport::table() const {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"config", "wall_ms_median", "steps", "avg_error", "note"});
  for (const auto& row : rows) {
    if (row.failed) {
      cells.push_back({row.config, "-", "-", "-", "FAILED: " + row.failure});
    } else {
      cells.push_back({row.config, fmt::format("{:.3f}", row.wall_ms_median),
                       fmt::format("{}", row.steps),
                       row.error ? fmt::format("{:.6e}", *row.error) : "",
                       row.error ? "" : "reference"});
    }
  }
  return format_table(cells);
}

BenchReport run_matrix(const BenchmarkMatrix& matrix) {
  if (matrix.rows.empty()) throw DataError("benchmark matrix has no rows");
  if (matrix.rows.front().source.mode != DriverMode::fixed_dt) {
    throw DataError("the first matrix row must be the fixed-step reference");
  }
  if (matrix.reps < 3) {
    throw DataError("timing repetitions must be >= 3 for a meaningful median");
  }
  fs::create_directories(matrix.out_dir);

  BenchReport report;
  std::optional<Trajectory> reference;
  int reference_machine = 0;
  for (size_t r = 0; r < matrix.rows.size(); ++r) {
    const auto& row = matrix.rows[r];
    BenchRowResult result;
    result.config = row.name;
    try {
      std::vector<double> wall_ms;
      Trajectory trajectory;
      int machine = 0;
      // Repetition 0 is the warm-up; its timing is discarded.
      for (int rep = 0; rep <= matrix.reps; ++rep) {
        ScenarioInstance instance = instantiate_scenario(matrix.scenario);
        const auto start = std::chrono::steady_clock::now();
        Trajectory run = simulate(*instance.model.system,
                                  instance.model.initial, instance.run,
                                  row.source);
        const auto stop = std::chrono::steady_clock::now();
        if (rep > 0) {
          wall_ms.push_back(
              std::chrono::duration<double, std::milli>(stop - start).count());
        }
        if (rep == matrix.reps) {
          trajectory = std::move(run);
          machine = instance.machine;
        }
      }
      result.wall_ms_median = median(wall_ms);
      result.steps = trajectory.accepted_steps();
      if (r == 0) {
        reference = trajectory;
        reference_machine = machine;
      } else if (reference) {
        result.error = avg_error(trajectory, *reference, reference_machine);
      }
      export_trajectory_csv(
          trajectory,
          matrix.out_dir / ("traj_" + sanitize_name(row.name) + ".csv"));
    } catch (const std::exception& failure) {
      result.failed = true;
      result.failure = failure.what();
    }
    report.rows.push_back(std::move(result));
  }

  CsvWriter csv(matrix.out_dir / "results.csv");
  csv.header({"config", "wall_ms_median", "steps", "avg_error"});
  for (const auto& row : report.rows) {
    csv.begin_row();
    csv.add(row.config);
    if (row.failed) {
      csv.add_blank().add_blank().add_blank();
    } else {
      csv.add(row.wall_ms_median).add(row.steps);
      if (row.error) {
        csv.add(*row.error);
      } else {
        csv.add_blank();
      }
    }
    csv.end_row();
  }
  return report;
}

// ---------------------------------------------------------------------------
// Scalar study and quantum trace
// ---------------------------------------------------------------------------

void run_scalar_study(const std::vector<double>& dqs,
                      const std::vector<ScalarMethod>& methods,
                      const fs::path& out_dir) {
  constexpr double kLambda = -0.6;
  constexpr double kX0 = 0.1;
  constexpr double kHorizon = 20.0;
  if (dqs.empty()) throw DataError("scalar study needs at least one quantum");
  fs::create_directories(out_dir);

  for (const double dq : dqs) {
    if (!(dq > 0.0)) {
      throw DataError(fmt::format("quantum must be > 0, got {}", dq));
    }
    for (const ScalarMethod method : methods) {
      ScalarQssConfig config;
      config.dq = dq;
      config.x0 = kX0;
      config.horizon = kHorizon;
      config.f = [](double x) { return kLambda * x; };
      const ScalarQssTrace trace = method == ScalarMethod::qss1
                                       ? qss1_simulate(config)
                                       : ab2_scalar_simulate(config);
      const std::string tag = fmt::format(
          "{}_dq{:g}", method == ScalarMethod::qss1 ? "qss1" : "ab2", dq);
      export_scalar_trace(trace, kLambda,
                          out_dir / fmt::format("scalar_{}.csv", tag));

      // Timing-error series: only unclamped quantization events with a
      // defined analytic crossing time qualify.
      CsvWriter timing(out_dir / fmt::format("timing_{}.csv", tag));
      timing.header({"k", "dt_k", "dt_star_k", "rel_err_k"});
      for (size_t k = 0; k + 1 < trace.events.size(); ++k) {
        const auto& event = trace.events[k];
        if (event.clamped) continue;
        const auto dt_star = exact_crossing_time(event.x, trace.dq, kLambda);
        if (!dt_star) continue;
        timing.begin_row();
        timing.add(static_cast<long long>(k))
            .add(event.dt)
            .add(*dt_star)
            .add(std::abs(event.dt - *dt_star) / *dt_star);
        timing.end_row();
      }
    }
  }

  CsvWriter exact(out_dir / "exact.csv");
  exact.header({"t", "x"});
  const long long samples = std::llround(kHorizon / 0.001);
  for (long long i = 0; i <= samples; ++i) {
    const double t = static_cast<double>(i) * 0.001;
    exact.begin_row();
    exact.add(t).add(kX0 * std::exp(kLambda * t));
    exact.end_row();
  }
}

void emit_quantum_trace(const Trajectory& trajectory, const fs::path& path) {
  if (!trajectory.adaptive()) {
    throw NotAdaptive(
        "quantum trace requires an adaptive-mode trajectory; fixed-quantum "
        "runs carry no quantum history");
  }
  CsvWriter csv(path);
  csv.header({"k", "t_k", "dq_k", "sigma_k", "dt_k"});
  for (size_t i = 1; i < trajectory.records.size(); ++i) {
    const auto& record = trajectory.records[i];
    csv.begin_row();
    csv.add(static_cast<long long>(i))
        .add(record.t)
        .add(record.dq)
        .add(record.sigma)
        .add(record.dt);
    csv.end_row();
  }
}

}  // namespace qstep
