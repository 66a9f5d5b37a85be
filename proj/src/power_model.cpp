#include "qstep/power_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "qstep/errors.hpp"

namespace qstep {

namespace {

using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Model file parsing
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::stringstream ss(line);
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

double parse_number(const std::string& tok, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(fmt::format("{}: expected a number, found '{}'", where, tok));
  }
}

int parse_int(const std::string& tok, const std::string& where) {
  try {
    size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(fmt::format("{}: expected an integer, found '{}'", where, tok));
  }
}

BusKind parse_bus_kind(const std::string& tok, const std::string& where) {
  if (tok == "slack") return BusKind::slack;
  if (tok == "pv") return BusKind::pv;
  if (tok == "pq") return BusKind::pq;
  if (tok == "inf") return BusKind::inf;
  throw DataError(fmt::format(
      "{}: unknown bus kind '{}' (expected slack, pv, pq, or inf)", where, tok));
}

void validate_network(const NetworkData& net) {
  if (net.buses.empty()) throw DataError("model has no buses");

  std::set<int> bus_ids;
  int references = 0;
  for (const auto& bus : net.buses) {
    if (!bus_ids.insert(bus.id).second) {
      throw DataError(fmt::format("duplicate bus id {}", bus.id));
    }
    if (bus.kind == BusKind::slack || bus.kind == BusKind::inf) ++references;
  }
  if (references != 1) {
    throw DataError(fmt::format(
        "model needs exactly one reference bus (slack or inf), found {}",
        references));
  }

  std::set<std::string> names;
  for (const auto& line : net.lines) {
    if (!names.insert("L:" + line.id).second) {
      throw DataError(fmt::format("duplicate line id '{}'", line.id));
    }
    if (!bus_ids.count(line.from) || !bus_ids.count(line.to)) {
      throw DataError(
          fmt::format("line '{}' references an unknown bus", line.id));
    }
    if (line.r * line.r + line.x * line.x <= 0.0) {
      throw DataError(fmt::format("line '{}' has zero series impedance", line.id));
    }
  }

  std::set<int> machine_buses;
  for (const auto& mac : net.machines) {
    if (!names.insert("M:" + mac.id).second) {
      throw DataError(fmt::format("duplicate machine id '{}'", mac.id));
    }
    if (!bus_ids.count(mac.bus)) {
      throw DataError(fmt::format("machine '{}' references an unknown bus", mac.id));
    }
    if (!(mac.h > 0.0)) {
      throw DataError(fmt::format("machine '{}' needs H > 0", mac.id));
    }
    if (!(mac.xdp > 0.0)) {
      throw DataError(fmt::format("machine '{}' needs X'd > 0", mac.id));
    }
    if (mac.d < 0.0) {
      throw DataError(fmt::format("machine '{}' needs D >= 0", mac.id));
    }
    if (!machine_buses.insert(mac.bus).second) {
      throw DataError(
          fmt::format("bus {} hosts more than one machine", mac.bus));
    }
    const auto bus = std::find_if(net.buses.begin(), net.buses.end(),
                                  [&](const BusData& b) { return b.id == mac.bus; });
    if (bus->kind == BusKind::inf) {
      throw DataError(fmt::format(
          "machine '{}' sits on the infinite bus; the infinite bus is the "
          "grid equivalent and cannot host dynamics",
          mac.id));
    }
    if (bus->kind == BusKind::pq) {
      throw DataError(fmt::format(
          "machine '{}' sits on a pq bus; generator buses must be pv or slack",
          mac.id));
    }
    if (bus->kind == BusKind::pv && !mac.pg.has_value()) {
      throw DataError(fmt::format(
          "machine '{}' on pv bus {} needs a dispatched power", mac.id, mac.bus));
    }
  }
  for (const auto& bus : net.buses) {
    if ((bus.kind == BusKind::pv || bus.kind == BusKind::slack) &&
        !machine_buses.count(bus.id)) {
      throw DataError(fmt::format(
          "generator bus {} has no machine attached", bus.id));
    }
  }
  for (const auto& load : net.loads) {
    if (!names.insert("D:" + load.id).second) {
      throw DataError(fmt::format("duplicate load id '{}'", load.id));
    }
    if (!bus_ids.count(load.bus)) {
      throw DataError(fmt::format("load '{}' references an unknown bus", load.id));
    }
    if (load.p < 0.0) {
      throw DataError(fmt::format("load '{}' has negative active power", load.id));
    }
  }
  if (net.machines.empty()) throw DataError("model has no machines");
  if (!(net.omega_base > 0.0)) throw DataError("base frequency must be > 0");
}

}  // namespace

NetworkData parse_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open model file '{}'", path.string()));

  NetworkData net;
  std::string section;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    const std::string where = fmt::format("{}:{}", path.string(), line_no);

    if (tokens[0].front() == '[') {
      if (tokens.size() != 1 || tokens[0].back() != ']') {
        throw DataError(fmt::format("{}: malformed section header", where));
      }
      section = tokens[0].substr(1, tokens[0].size() - 2);
      if (section != "system" && section != "bus" && section != "line" &&
          section != "machine" && section != "load") {
        throw DataError(fmt::format("{}: unknown section '{}'", where, section));
      }
      continue;
    }

    if (section == "system") {
      if (tokens.size() != 2 || tokens[0] != "fbase") {
        throw DataError(fmt::format(
            "{}: [system] rows are 'fbase <Hz>'", where));
      }
      net.omega_base = 2.0 * kPi * parse_number(tokens[1], where);
    } else if (section == "bus") {
      if (tokens.size() != 4) {
        throw DataError(fmt::format(
            "{}: [bus] rows are 'id kind vm va_deg'", where));
      }
      BusData bus;
      bus.id = parse_int(tokens[0], where);
      bus.kind = parse_bus_kind(tokens[1], where);
      bus.vm = tokens[2] == "-" ? 1.0 : parse_number(tokens[2], where);
      bus.va_deg = tokens[3] == "-" ? 0.0 : parse_number(tokens[3], where);
      net.buses.push_back(bus);
    } else if (section == "line") {
      if (tokens.size() != 6) {
        throw DataError(fmt::format(
            "{}: [line] rows are 'id from to r x b'", where));
      }
      LineData ln;
      ln.id = tokens[0];
      ln.from = parse_int(tokens[1], where);
      ln.to = parse_int(tokens[2], where);
      ln.r = parse_number(tokens[3], where);
      ln.x = parse_number(tokens[4], where);
      ln.b = parse_number(tokens[5], where);
      net.lines.push_back(ln);
    } else if (section == "machine") {
      if (tokens.size() != 6) {
        throw DataError(fmt::format(
            "{}: [machine] rows are 'id bus h d xdp pg'", where));
      }
      MachineData mac;
      mac.id = tokens[0];
      mac.bus = parse_int(tokens[1], where);
      mac.h = parse_number(tokens[2], where);
      mac.d = parse_number(tokens[3], where);
      mac.xdp = parse_number(tokens[4], where);
      if (tokens[5] != "-") mac.pg = parse_number(tokens[5], where);
      net.machines.push_back(mac);
    } else if (section == "load") {
      if (tokens.size() != 4) {
        throw DataError(fmt::format(
            "{}: [load] rows are 'id bus p q'", where));
      }
      LoadData load;
      load.id = tokens[0];
      load.bus = parse_int(tokens[1], where);
      load.p = parse_number(tokens[2], where);
      load.q = parse_number(tokens[3], where);
      net.loads.push_back(load);
    } else {
      throw DataError(fmt::format("{}: data before any section header", where));
    }
  }
  validate_network(net);
  return net;
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

namespace {

int index_of_bus(const NetworkData& net, int bus_id, const std::string& what) {
  for (size_t i = 0; i < net.buses.size(); ++i) {
    if (net.buses[i].id == bus_id) return static_cast<int>(i);
  }
  throw DataError(fmt::format("{}: unknown bus id {}", what, bus_id));
}

/// Bus admittance matrix of the passive network: series branches and line
/// charging only (no loads, no machines, no faults).
Eigen::MatrixXcd line_admittance_matrix(const NetworkData& net,
                                        const std::vector<bool>& line_on) {
  const int nb = static_cast<int>(net.buses.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(nb, nb);
  for (size_t l = 0; l < net.lines.size(); ++l) {
    if (!line_on[l]) continue;
    const auto& ln = net.lines[l];
    const int f = index_of_bus(net, ln.from, "line " + ln.id);
    const int t = index_of_bus(net, ln.to, "line " + ln.id);
    const Complex ys = 1.0 / Complex(ln.r, ln.x);
    const Complex ysh(0.0, ln.b / 2.0);
    y(f, f) += ys + ysh;
    y(t, t) += ys + ysh;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  return y;
}

}  // namespace

PowerFlowResult solve_power_flow(const NetworkData& net) {
  validate_network(net);
  const int nb = static_cast<int>(net.buses.size());
  const std::vector<bool> all_on(net.lines.size(), true);
  const Eigen::MatrixXcd ybus = line_admittance_matrix(net, all_on);
  const Eigen::MatrixXd g = ybus.real();
  const Eigen::MatrixXd b = ybus.imag();

  // Unknown layout: angles at every non-reference bus, magnitudes at pq.
  int ref = -1;
  std::vector<int> ang_idx, mag_idx;
  for (int i = 0; i < nb; ++i) {
    const auto kind = net.buses[i].kind;
    if (kind == BusKind::slack || kind == BusKind::inf) {
      ref = i;
    } else {
      ang_idx.push_back(i);
      if (kind == BusKind::pq) mag_idx.push_back(i);
    }
  }

  // Specified net injections.
  Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd q_spec = Eigen::VectorXd::Zero(nb);
  for (const auto& mac : net.machines) {
    if (mac.pg) p_spec[index_of_bus(net, mac.bus, "machine " + mac.id)] += *mac.pg;
  }
  for (const auto& load : net.loads) {
    const int i = index_of_bus(net, load.bus, "load " + load.id);
    p_spec[i] -= load.p;
    q_spec[i] -= load.q;
  }

  Eigen::VectorXd vm(nb), va(nb);
  for (int i = 0; i < nb; ++i) {
    const auto& bus = net.buses[i];
    vm[i] = (bus.kind == BusKind::pq) ? 1.0 : bus.vm;
    va[i] = net.buses[ref].va_deg * kPi / 180.0;
  }
  va[ref] = net.buses[ref].va_deg * kPi / 180.0;

  const int na = static_cast<int>(ang_idx.size());
  const int nm = static_cast<int>(mag_idx.size());
  const int nu = na + nm;

  auto injections = [&](Eigen::VectorXd& p, Eigen::VectorXd& q) {
    for (int i = 0; i < nb; ++i) {
      double pi = 0.0, qi = 0.0;
      for (int k = 0; k < nb; ++k) {
        const double th = va[i] - va[k];
        const double c = std::cos(th), s = std::sin(th);
        pi += vm[i] * vm[k] * (g(i, k) * c + b(i, k) * s);
        qi += vm[i] * vm[k] * (g(i, k) * s - b(i, k) * c);
      }
      p[i] = pi;
      q[i] = qi;
    }
  };

  Eigen::VectorXd p(nb), q(nb), mismatch(nu);
  int iterations = 0;
  for (int iter = 0;; ++iter) {
    injections(p, q);
    for (int a = 0; a < na; ++a) mismatch[a] = p_spec[ang_idx[a]] - p[ang_idx[a]];
    for (int m = 0; m < nm; ++m) {
      mismatch[na + m] = q_spec[mag_idx[m]] - q[mag_idx[m]];
    }
    if (mismatch.lpNorm<Eigen::Infinity>() <= 1e-10) {
      iterations = iter;
      break;
    }
    if (iter >= 50) {
      throw PowerFlowError(fmt::format(
          "power flow did not converge (residual {:.3e} after {} iterations)",
          mismatch.lpNorm<Eigen::Infinity>(), iter));
    }

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nu, nu);
    for (int a = 0; a < na; ++a) {
      const int i = ang_idx[a];
      for (int a2 = 0; a2 < na; ++a2) {
        const int j = ang_idx[a2];
        if (i == j) {
          jac(a, a2) = -q[i] - b(i, i) * vm[i] * vm[i];
        } else {
          const double th = va[i] - va[j];
          jac(a, a2) =
              vm[i] * vm[j] * (g(i, j) * std::sin(th) - b(i, j) * std::cos(th));
        }
      }
      for (int m2 = 0; m2 < nm; ++m2) {
        const int j = mag_idx[m2];
        if (i == j) {
          jac(a, na + m2) = p[i] / vm[i] + g(i, i) * vm[i];
        } else {
          const double th = va[i] - va[j];
          jac(a, na + m2) =
              vm[i] * (g(i, j) * std::cos(th) + b(i, j) * std::sin(th));
        }
      }
    }
    for (int m = 0; m < nm; ++m) {
      const int i = mag_idx[m];
      for (int a2 = 0; a2 < na; ++a2) {
        const int j = ang_idx[a2];
        if (i == j) {
          jac(na + m, a2) = p[i] - g(i, i) * vm[i] * vm[i];
        } else {
          const double th = va[i] - va[j];
          jac(na + m, a2) =
              -vm[i] * vm[j] * (g(i, j) * std::cos(th) + b(i, j) * std::sin(th));
        }
      }
      for (int m2 = 0; m2 < nm; ++m2) {
        const int j = mag_idx[m2];
        if (i == j) {
          jac(na + m, na + m2) = q[i] / vm[i] - b(i, i) * vm[i];
        } else {
          const double th = va[i] - va[j];
          jac(na + m, na + m2) =
              vm[i] * (g(i, j) * std::sin(th) - b(i, j) * std::cos(th));
        }
      }
    }

    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const Eigen::VectorXd delta = lu.solve(mismatch);
    if (!delta.allFinite()) {
      throw PowerFlowError("power flow Jacobian solve produced non-finite step");
    }
    for (int a = 0; a < na; ++a) va[ang_idx[a]] += delta[a];
    for (int m = 0; m < nm; ++m) vm[mag_idx[m]] += delta[na + m];
  }

  PowerFlowResult result;
  result.v.resize(nb);
  for (int i = 0; i < nb; ++i) {
    result.v[i] = std::polar(vm[i], va[i]);
  }
  injections(p, q);
  result.p_reference = p[ref];
  result.q_reference = q[ref];
  result.q_injection = q;
  result.iterations = iterations;
  return result;
}

// ---------------------------------------------------------------------------
// Dynamic model
// ---------------------------------------------------------------------------

MultiMachineModel::MultiMachineModel(const NetworkData& net,
                                     const PowerFlowResult& pf)
    : net_(net) {
  validate_network(net_);
  const int nb = static_cast<int>(net_.buses.size());
  if (pf.v.size() != nb) {
    throw DataError("power flow result does not match the network");
  }
  v_pf_ = pf.v;
  line_on_.assign(net_.lines.size(), true);
  load_scale_p_.assign(net_.loads.size(), 1.0);
  load_scale_q_.assign(net_.loads.size(), 1.0);
  fault_g_.assign(nb, 0.0);

  dyn_index_.assign(nb, -1);
  for (int i = 0; i < nb; ++i) {
    if (net_.buses[i].kind != BusKind::inf) {
      dyn_index_[i] = static_cast<int>(dyn_buses_.size());
      dyn_buses_.push_back(i);
    }
  }

  // Machine EMFs from the generator injections at the solved voltages.
  Eigen::VectorXd x0(2 * static_cast<int>(net_.machines.size()));
  for (size_t k = 0; k < net_.machines.size(); ++k) {
    const auto& mac = net_.machines[k];
    const int bus = index_of_bus(net_, mac.bus, "machine " + mac.id);
    double pg, qg;
    double p_load = 0.0, q_load = 0.0;
    for (const auto& load : net_.loads) {
      if (load.bus == mac.bus) {
        p_load += load.p;
        q_load += load.q;
      }
    }
    if (net_.buses[bus].kind == BusKind::slack) {
      pg = pf.p_reference + p_load;
      qg = pf.q_reference + q_load;
    } else {
      pg = *mac.pg;
      qg = pf.q_injection[bus] + q_load;
    }
    const Complex v = pf.v[bus];
    const Complex i_gen = std::conj(Complex(pg, qg) / v);
    const Complex emf = v + Complex(0.0, mac.xdp) * i_gen;

    Machine machine;
    machine.bus = bus;
    machine.h = mac.h;
    machine.d = mac.d;
    machine.xdp = mac.xdp;
    machine.emf = std::abs(emf);
    machine.pm = 0.0;  // fixed below, after the network matrices exist
    machines_.push_back(machine);

    x0[2 * static_cast<int>(k)] = std::arg(emf);
    x0[2 * static_cast<int>(k) + 1] = 1.0;
  }

  rebuild_network();

  // Consistent algebraic start from the power-flow voltages.
  Eigen::VectorXd y_guess(n_algebraic());
  for (size_t d = 0; d < dyn_buses_.size(); ++d) {
    y_guess[2 * d] = pf.v[dyn_buses_[d]].real();
    y_guess[2 * d + 1] = pf.v[dyn_buses_[d]].imag();
  }
  initial_ = consistent_init(*this, x0, y_guess);

  // Pin the mechanical power to the electrical power at the initial point,
  // evaluated through the same code path the dynamics use. The model then
  // starts at an exact equilibrium of its own equations (f identically
  // zero), not merely near one.
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = initial_.x[2 * k];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    const double vr = initial_.y[2 * slot];
    const double vi = initial_.y[2 * slot + 1];
    machines_[k].pm = (ei * vr - er * vi) / mac.xdp;
  }
}

void MultiMachineModel::rebuild_network() {
  const int nb = static_cast<int>(net_.buses.size());
  Eigen::MatrixXcd y = line_admittance_matrix(net_, line_on_);

  for (size_t l = 0; l < net_.loads.size(); ++l) {
    const auto& load = net_.loads[l];
    const int bus = index_of_bus(net_, load.bus, "load " + load.id);
    const double v2 = std::norm(v_pf_[bus]);
    y(bus, bus) += Complex(load.p * load_scale_p_[l] / v2,
                           -load.q * load_scale_q_[l] / v2);
  }
  for (const auto& mac : machines_) {
    y(mac.bus, mac.bus) += 1.0 / Complex(0.0, mac.xdp);
  }
  for (int i = 0; i < nb; ++i) {
    y(i, i) += Complex(fault_g_[i], 0.0);
  }

  const int nd = static_cast<int>(dyn_buses_.size());
  g_mat_.resize(nd, nd);
  b_mat_.resize(nd, nd);
  for (int a = 0; a < nd; ++a) {
    for (int c = 0; c < nd; ++c) {
      g_mat_(a, c) = y(dyn_buses_[a], dyn_buses_[c]).real();
      b_mat_(a, c) = y(dyn_buses_[a], dyn_buses_[c]).imag();
    }
  }
  i_inf_r_ = Eigen::VectorXd::Zero(nd);
  i_inf_i_ = Eigen::VectorXd::Zero(nd);
  for (int a = 0; a < nd; ++a) {
    for (int k = 0; k < nb; ++k) {
      if (dyn_index_[k] != -1) continue;
      const Complex contribution = -y(dyn_buses_[a], k) * v_pf_[k];
      i_inf_r_[a] += contribution.real();
      i_inf_i_[a] += contribution.imag();
    }
  }
}

int MultiMachineModel::n_states() const {
  return 2 * static_cast<int>(machines_.size());
}

int MultiMachineModel::n_algebraic() const {
  return 2 * static_cast<int>(dyn_buses_.size());
}

void MultiMachineModel::eval_f(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y,
                               Eigen::VectorXd& f_out) const {
  f_out.resize(n_states());
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = x[2 * k];
    const double omega = x[2 * k + 1];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    const double vr = y[2 * slot];
    const double vi = y[2 * slot + 1];
    const double pe = (ei * vr - er * vi) / mac.xdp;
    f_out[2 * k] = net_.omega_base * (omega - 1.0);
    f_out[2 * k + 1] = (mac.pm - pe - mac.d * (omega - 1.0)) / (2.0 * mac.h);
  }
}

void MultiMachineModel::eval_g(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y,
                               Eigen::VectorXd& g_out) const {
  const int nd = static_cast<int>(dyn_buses_.size());
  g_out.resize(2 * nd);
  for (int a = 0; a < nd; ++a) {
    double ir = i_inf_r_[a];
    double ii = i_inf_i_[a];
    for (int c = 0; c < nd; ++c) {
      const double vr = y[2 * c];
      const double vi = y[2 * c + 1];
      ir -= g_mat_(a, c) * vr - b_mat_(a, c) * vi;
      ii -= b_mat_(a, c) * vr + g_mat_(a, c) * vi;
    }
    g_out[2 * a] = ir;
    g_out[2 * a + 1] = ii;
  }
  // Norton injections of the machines.
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = x[2 * k];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    g_out[2 * slot] += ei / mac.xdp;
    g_out[2 * slot + 1] += -er / mac.xdp;
  }
}

Eigen::MatrixXd MultiMachineModel::jac_fx(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  const int n = n_states();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = x[2 * k];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    const double vr = y[2 * slot];
    const double vi = y[2 * slot + 1];
    // d(Pe)/d(delta) = (vr * er + vi * ei) / xdp
    const double dpe_ddelta = (vr * er + vi * ei) / mac.xdp;
    jac(2 * k, 2 * k + 1) = net_.omega_base;
    jac(2 * k + 1, 2 * k) = -dpe_ddelta / (2.0 * mac.h);
    jac(2 * k + 1, 2 * k + 1) = -mac.d / (2.0 * mac.h);
  }
  return jac;
}

Eigen::MatrixXd MultiMachineModel::jac_fy(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  (void)y;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_states(), n_algebraic());
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = x[2 * k];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    // d(Pe)/d(vr) = ei/xdp, d(Pe)/d(vi) = -er/xdp
    jac(2 * k + 1, 2 * slot) = -(ei / mac.xdp) / (2.0 * mac.h);
    jac(2 * k + 1, 2 * slot + 1) = (er / mac.xdp) / (2.0 * mac.h);
  }
  return jac;
}

Eigen::MatrixXd MultiMachineModel::jac_gx(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  (void)y;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_algebraic(), n_states());
  for (size_t k = 0; k < machines_.size(); ++k) {
    const auto& mac = machines_[k];
    const double delta = x[2 * k];
    const double er = mac.emf * std::cos(delta);
    const double ei = mac.emf * std::sin(delta);
    const int slot = dyn_index_[mac.bus];
    // d(I_Norton)/d(delta): dIr = er/xdp, dIi = ei/xdp
    jac(2 * slot, 2 * k) = er / mac.xdp;
    jac(2 * slot + 1, 2 * k) = ei / mac.xdp;
  }
  return jac;
}

Eigen::MatrixXd MultiMachineModel::jac_gy(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y) const {
  (void)x;
  (void)y;
  const int nd = static_cast<int>(dyn_buses_.size());
  Eigen::MatrixXd jac(2 * nd, 2 * nd);
  for (int a = 0; a < nd; ++a) {
    for (int c = 0; c < nd; ++c) {
      jac(2 * a, 2 * c) = -g_mat_(a, c);
      jac(2 * a, 2 * c + 1) = b_mat_(a, c);
      jac(2 * a + 1, 2 * c) = -b_mat_(a, c);
      jac(2 * a + 1, 2 * c + 1) = -g_mat_(a, c);
    }
  }
  return jac;
}

void MultiMachineModel::apply_fault_shunt(int bus_id, double conductance) {
  fault_g_[index_of_bus(net_, bus_id, "fault")] += conductance;
  rebuild_network();
}

void MultiMachineModel::remove_fault_shunt(int bus_id) {
  fault_g_[index_of_bus(net_, bus_id, "fault")] = 0.0;
  rebuild_network();
}

void MultiMachineModel::set_line_status(const std::string& line_id,
                                        bool in_service) {
  for (size_t l = 0; l < net_.lines.size(); ++l) {
    if (net_.lines[l].id == line_id) {
      line_on_[l] = in_service;
      rebuild_network();
      return;
    }
  }
  throw DataError(fmt::format("unknown line id '{}'", line_id));
}

void MultiMachineModel::set_load_scale(size_t load_index, double p_factor,
                                       double q_factor) {
  if (load_index >= net_.loads.size()) {
    throw DataError(fmt::format("load index {} out of range", load_index));
  }
  load_scale_p_[load_index] = p_factor;
  load_scale_q_[load_index] = q_factor;
  rebuild_network();
}

int MultiMachineModel::n_machines() const {
  return static_cast<int>(machines_.size());
}

int MultiMachineModel::machine_index(const std::string& machine_id) const {
  for (size_t k = 0; k < net_.machines.size(); ++k) {
    if (net_.machines[k].id == machine_id) return static_cast<int>(k);
  }
  throw DataError(fmt::format("unknown machine id '{}'", machine_id));
}

double MultiMachineModel::machine_emf(int machine) const {
  return machines_.at(machine).emf;
}

double MultiMachineModel::machine_pm(int machine) const {
  return machines_.at(machine).pm;
}

int MultiMachineModel::bus_index(int bus_id) const {
  return index_of_bus(net_, bus_id, "bus lookup");
}

int MultiMachineModel::algebraic_index(int bus_id) const {
  return dyn_index_[index_of_bus(net_, bus_id, "bus lookup")];
}

BuiltModel build_model(const NetworkData& net) {
  BuiltModel built;
  built.power_flow = solve_power_flow(net);
  built.system = std::make_unique<MultiMachineModel>(net, built.power_flow);
  built.initial = built.system->initial_state();
  return built;
}

BuiltModel build_model(const std::filesystem::path& model_file) {
  return build_model(parse_model_file(model_file));
}

// ---------------------------------------------------------------------------
// Scenario factories
// ---------------------------------------------------------------------------

namespace {

MultiMachineModel& as_power_model(ExplicitDaeSystem& system) {
  auto* model = dynamic_cast<MultiMachineModel*>(&system);
  if (!model) {
    throw DataError("disturbance applied to a non-power-system model");
  }
  return *model;
}

/// True when every machine bus and every infinite bus remains in one
/// connected component after removing `tripped_line`.
bool stays_connected(const NetworkData& net, const std::string& tripped_line) {
  const int nb = static_cast<int>(net.buses.size());
  std::vector<std::vector<int>> adjacency(nb);
  for (const auto& ln : net.lines) {
    if (ln.id == tripped_line) continue;
    int f = -1, t = -1;
    for (int i = 0; i < nb; ++i) {
      if (net.buses[i].id == ln.from) f = i;
      if (net.buses[i].id == ln.to) t = i;
    }
    adjacency[f].push_back(t);
    adjacency[t].push_back(f);
  }
  std::vector<int> must_reach;
  for (int i = 0; i < nb; ++i) {
    if (net.buses[i].kind == BusKind::inf) must_reach.push_back(i);
  }
  for (const auto& mac : net.machines) {
    for (int i = 0; i < nb; ++i) {
      if (net.buses[i].id == mac.bus) must_reach.push_back(i);
    }
  }
  if (must_reach.empty()) return true;

  std::vector<bool> seen(nb, false);
  std::vector<int> stack = {must_reach.front()};
  seen[must_reach.front()] = true;
  while (!stack.empty()) {
    const int at = stack.back();
    stack.pop_back();
    for (int next : adjacency[at]) {
      if (!seen[next]) {
        seen[next] = true;
        stack.push_back(next);
      }
    }
  }
  return std::all_of(must_reach.begin(), must_reach.end(),
                     [&](int i) { return seen[i]; });
}

}  // namespace

ScenarioSpec make_fault_scenario(const MultiMachineModel& model, int fault_bus,
                                 double t_on, double duration,
                                 const std::string& trip_line,
                                 double shunt_conductance) {
  const auto& net = model.data();
  (void)model.bus_index(fault_bus);  // validates the bus id
  const auto line = std::find_if(
      net.lines.begin(), net.lines.end(),
      [&](const LineData& ln) { return ln.id == trip_line; });
  if (line == net.lines.end()) {
    throw DataError(fmt::format("unknown line id '{}'", trip_line));
  }
  if (line->from != fault_bus && line->to != fault_bus) {
    throw DataError(fmt::format(
        "line '{}' is not incident to the faulted bus {}", trip_line, fault_bus));
  }
  if (duration < 0.0) throw DataError("fault duration must be >= 0");
  if (!stays_connected(net, trip_line)) {
    throw TopologyError(fmt::format(
        "tripping line '{}' would island a machine or the infinite bus",
        trip_line));
  }

  ScenarioSpec spec;
  spec.name = fmt::format("fault@bus{}", fault_bus);
  spec.events.push_back(
      {t_on, fmt::format("apply fault at bus {}", fault_bus),
       [fault_bus, shunt_conductance](ExplicitDaeSystem& system) {
         as_power_model(system).apply_fault_shunt(fault_bus, shunt_conductance);
       }});
  spec.events.push_back(
      {t_on + duration,
       fmt::format("clear fault at bus {}, trip line {}", fault_bus, trip_line),
       [fault_bus, trip_line](ExplicitDaeSystem& system) {
         auto& model = as_power_model(system);
         model.remove_fault_shunt(fault_bus);
         model.set_line_status(trip_line, false);
       }});
  return spec;
}

ScenarioSpec make_load_loss_scenario(const MultiMachineModel& model,
                                     const std::vector<int>& buses,
                                     double delta_p, double delta_q,
                                     double t_on) {
  const auto& net = model.data();
  std::vector<size_t> targets;
  double p_total = 0.0, q_total = 0.0;
  for (size_t l = 0; l < net.loads.size(); ++l) {
    if (std::find(buses.begin(), buses.end(), net.loads[l].bus) != buses.end()) {
      targets.push_back(l);
      p_total += net.loads[l].p;
      q_total += net.loads[l].q;
    }
  }
  if (targets.empty()) {
    throw DataError("load loss: no load connected at the targeted buses");
  }
  if (delta_p < 0.0 || delta_q < 0.0) {
    throw DataError("load loss: removed power must be >= 0");
  }
  if (delta_p > p_total * (1.0 + 1e-12)) {
    throw DataError(fmt::format(
        "load loss: removing {:.4g} pu exceeds the {:.4g} pu connected at the "
        "targeted buses",
        delta_p, p_total));
  }
  if (delta_q > q_total * (1.0 + 1e-12)) {
    throw DataError(fmt::format(
        "load loss: removing {:.4g} pu reactive exceeds the {:.4g} pu connected",
        delta_q, q_total));
  }
  const double p_factor = p_total > 0.0 ? 1.0 - delta_p / p_total : 1.0;
  const double q_factor = q_total > 0.0 ? 1.0 - delta_q / q_total : 1.0;

  ScenarioSpec spec;
  spec.name = fmt::format("loadloss@{:.4g}pu", delta_p);
  spec.events.push_back(
      {t_on, fmt::format("scale load to {:.4g} (P), {:.4g} (Q)", p_factor, q_factor),
       [targets, p_factor, q_factor](ExplicitDaeSystem& system) {
         auto& model = as_power_model(system);
         for (size_t idx : targets) {
           model.set_load_scale(idx, p_factor, q_factor);
         }
       }});
  return spec;
}

double avg_error(const Trajectory& trajectory, const Trajectory& reference,
                 int machine) {
  if (trajectory.records.empty() || reference.records.empty()) {
    throw EmptySeries("avg_error: empty trajectory");
  }
  const Eigen::Index column = 2 * machine + 1;
  if (machine < 0 || column >= trajectory.records.front().x.size() ||
      column >= reference.records.front().x.size()) {
    throw DataError(fmt::format("avg_error: no machine {} in the trajectory",
                                machine));
  }
  const double t0_c = trajectory.records.front().t;
  const double t1_c = trajectory.records.back().t;
  const double t0_r = reference.records.front().t;
  const double t1_r = reference.records.back().t;
  if (std::abs(t0_c - t0_r) > 1e-9 || std::abs(t1_c - t1_r) > 1e-9) {
    throw GridError(fmt::format(
        "avg_error: trajectories cover [{:.6g}, {:.6g}] vs [{:.6g}, {:.6g}]",
        t0_c, t1_c, t0_r, t1_r));
  }

  const auto& cand = trajectory.records;
  double sum = 0.0;
  size_t seg = 0;
  for (const auto& ref_rec : reference.records) {
    const double t = std::clamp(ref_rec.t, t0_c, t1_c);
    while (seg + 2 < cand.size() && cand[seg + 1].t < t) ++seg;
    const auto& lo = cand[seg];
    const auto& hi = cand[seg + 1 < cand.size() ? seg + 1 : seg];
    const double span = hi.t - lo.t;
    const double w = span > 0.0 ? std::clamp((t - lo.t) / span, 0.0, 1.0) : 0.0;
    const double value = lo.x[column] + w * (hi.x[column] - lo.x[column]);
    sum += std::abs(value - ref_rec.x[column]);
  }
  return sum / static_cast<double>(reference.records.size());
}

}  // namespace qstep
