#pragma once

#include <Eigen/Dense>
#include <complex>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qstep/dae.hpp"
#include "qstep/trapezoidal.hpp"

namespace qstep {

enum class BusKind {
  slack,  ///< reference bus hosting a dynamic machine (angle/voltage fixed
          ///< for the steady-state solve only)
  pv,     ///< generator bus: P and |V| specified
  pq,     ///< load bus: P and Q specified
  inf,    ///< infinite bus: voltage phasor fixed before and during dynamics
};

struct BusData {
  int id = 0;
  BusKind kind = BusKind::pq;
  double vm = 1.0;      ///< voltage setpoint (slack/pv/inf)
  double va_deg = 0.0;  ///< angle setpoint in degrees (slack/inf)
};

struct LineData {
  std::string id;
  int from = 0;
  int to = 0;
  double r = 0.0;  ///< series resistance, per-unit
  double x = 0.0;  ///< series reactance, per-unit
  double b = 0.0;  ///< total charging susceptance, per-unit (b/2 per end)
};

struct MachineData {
  std::string id;
  int bus = 0;
  double h = 0.0;    ///< inertia constant, seconds
  double d = 0.0;    ///< damping coefficient, per-unit
  double xdp = 0.0;  ///< transient reactance, per-unit
  std::optional<double> pg;  ///< dispatched power; absent on the slack bus
};

struct LoadData {
  std::string id;
  int bus = 0;
  double p = 0.0;  ///< consumed active power at nominal voltage, per-unit
  double q = 0.0;  ///< consumed reactive power, per-unit
};

struct NetworkData {
  double omega_base = 2.0 * 3.14159265358979323846 * 60.0;  ///< rad/s
  std::vector<BusData> buses;
  std::vector<LineData> lines;
  std::vector<MachineData> machines;
  std::vector<LoadData> loads;
};

/// Parses the structured-text model format (sections [system], [bus],
/// [line], [machine], [load]; see README for the field tables). Throws
/// DataError on malformed or inconsistent input.
[[nodiscard]] NetworkData parse_model_file(const std::filesystem::path& path);

struct PowerFlowResult {
  Eigen::VectorXcd v;          ///< complex bus voltages, file order
  double p_reference = 0.0;    ///< active injection at the reference bus
  double q_reference = 0.0;    ///< reactive injection at the reference bus
  Eigen::VectorXd q_injection; ///< net reactive injection per bus
  int iterations = 0;
};

/// Newton-Raphson steady-state solve of the network (loads as PQ
/// injections). Throws PowerFlowError on non-convergence, DataError on an
/// unsolvable bus-type pattern.
[[nodiscard]] PowerFlowResult solve_power_flow(const NetworkData& net);

/// Classical multi-machine dynamics in explicit-DAE form:
///   states  x = (delta_i [rad], omega_i [pu]) per machine,
///   algebraics y = (vr_j, vi_j) per non-infinite bus,
///   delta' = omega_base (omega - 1)
///   omega' = (Pm - Pe(delta, V) - D (omega - 1)) / (2H)
/// with constant-impedance loads, machines as constant-EMF Norton sources
/// behind their transient reactance, and rectangular current balance as g.
/// Infinite buses keep their solved voltage and are eliminated from y.
/// Disturbance mutators rebuild the network matrices in place.
class MultiMachineModel : public ExplicitDaeSystem {
 public:
  /// Builds the model from a solved power flow: converts loads to
  /// admittances at the solved voltages, initializes machine EMFs from the
  /// generator injections, and fixes Pm := Pe at the initial point so the
  /// model starts at an exact equilibrium.
  MultiMachineModel(const NetworkData& net, const PowerFlowResult& pf);

  int n_states() const override;
  int n_algebraic() const override;
  void eval_f(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& f_out) const override;
  void eval_g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              Eigen::VectorXd& g_out) const override;
  Eigen::MatrixXd jac_fx(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jac_fy(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jac_gx(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jac_gy(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) const override;

  // --- disturbance mutators (each rebuilds the network matrices) ---
  void apply_fault_shunt(int bus_id, double conductance);
  void remove_fault_shunt(int bus_id);
  void set_line_status(const std::string& line_id, bool in_service);
  /// Rescales one load's admittance relative to its original P/Q.
  void set_load_scale(size_t load_index, double p_factor, double q_factor);

  // --- introspection ---
  [[nodiscard]] const NetworkData& data() const { return net_; }
  [[nodiscard]] int n_machines() const;
  [[nodiscard]] int machine_index(const std::string& machine_id) const;
  [[nodiscard]] double machine_emf(int machine) const;
  [[nodiscard]] double machine_pm(int machine) const;
  /// Initial (delta, omega, v) state consistent with the power flow.
  [[nodiscard]] const SystemState& initial_state() const { return initial_; }
  /// Index of a bus id in file order. Throws DataError if unknown.
  [[nodiscard]] int bus_index(int bus_id) const;
  /// Position of a non-infinite bus inside y (vr at 2k, vi at 2k+1);
  /// -1 for infinite buses.
  [[nodiscard]] int algebraic_index(int bus_id) const;

 private:
  struct Machine {
    int bus = 0;       // internal bus index
    double h, d, xdp;
    double emf = 0.0;  // constant EMF magnitude
    double pm = 0.0;   // mechanical power, fixed at the initial equilibrium
  };

  void rebuild_network();

  NetworkData net_;
  std::vector<Machine> machines_;
  std::vector<int> dyn_index_;       // bus -> y slot (or -1 for inf buses)
  std::vector<int> dyn_buses_;       // y slot -> bus
  Eigen::VectorXcd v_pf_;            // power-flow voltages (load conversion)
  std::vector<bool> line_on_;
  std::vector<double> load_scale_p_, load_scale_q_;
  std::vector<double> fault_g_;      // per-bus fault conductance
  Eigen::MatrixXd g_mat_, b_mat_;    // dyn x dyn conductance/susceptance
  Eigen::VectorXd i_inf_r_, i_inf_i_;  // fixed injections from inf buses
  SystemState initial_;
};

/// Ready-to-simulate bundle produced from a model file.
struct BuiltModel {
  std::unique_ptr<MultiMachineModel> system;
  SystemState initial;
  PowerFlowResult power_flow;
};

/// Parses, solves the power flow, and instantiates the dynamic model.
[[nodiscard]] BuiltModel build_model(const NetworkData& net);
[[nodiscard]] BuiltModel build_model(const std::filesystem::path& model_file);

/// Disturbance sequence plus reporting metadata for one simulation.
struct ScenarioSpec {
  std::string name;
  double horizon = 20.0;
  std::vector<DisturbanceEvent> events;
  int machine_index = 0;  ///< representative machine for error metrics
};

/// Three-phase fault at `fault_bus` from t_on to t_on + duration (modeled
/// as a large shunt conductance, default 1e6 pu), cleared by removing the
/// shunt and tripping `trip_line` (which must be incident to the bus).
/// Throws TopologyError if the trip would leave any machine or infinite bus
/// disconnected from the others.
[[nodiscard]] ScenarioSpec make_fault_scenario(const MultiMachineModel& model,
                                               int fault_bus, double t_on,
                                               double duration,
                                               const std::string& trip_line,
                                               double shunt_conductance = 1e6);

/// Load loss: at t_on, removes delta_p / delta_q (per-unit, totals across
/// `buses`) by scaling those buses' load admittances down proportionally.
/// Throws DataError if the removal exceeds the connected load.
[[nodiscard]] ScenarioSpec make_load_loss_scenario(
    const MultiMachineModel& model, const std::vector<int>& buses,
    double delta_p, double delta_q, double t_on);

/// Mean absolute rotor-speed deviation of `machine` between a candidate
/// trajectory and a reference, with the candidate linearly interpolated
/// onto the reference time grid. Throws GridError if the two trajectories
/// do not cover the same interval.
[[nodiscard]] double avg_error(const Trajectory& trajectory,
                               const Trajectory& reference, int machine);

}  // namespace qstep
