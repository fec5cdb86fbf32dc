#include "gridosc/dynsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace gridosc::dynsim {

using cplx = std::complex<double>;
using netmodel::BusType;
using netmodel::GridModel;
using netmodel::OperatingPoint;

namespace {

/// Dynamic-phase network: constant loads folded as admittances at the
/// operating-point voltages, machines as EMF sources behind x'd, slack
/// buses without a machine held as fixed-voltage (infinite) nodes.
/// Fluctuating slots stay constant-power and are resolved by fixed-point
/// iteration on the bus voltages.
class NetworkSolver {
 public:
  NetworkSolver(const GridModel& grid, const OperatingPoint& op, double tol, int max_iters)
      : grid_(grid), tol_(tol), max_iters_(max_iters) {
    const auto n = static_cast<Eigen::Index>(grid.buses.size());
    Eigen::MatrixXcd y = netmodel::build_ybus(grid);

    // Constant loads to admittance at the solved voltage.
    for (const auto& l : grid.loads) {
      const auto i = static_cast<Eigen::Index>(grid.bus_index(l.bus));
      const cplx s = cplx(l.p_mw, l.q_mvar) / grid.mva_base;
      const double v2 = op.vm_pu(i) * op.vm_pu(i);
      y(i, i) += std::conj(s) / v2;
    }
    // Machine Norton admittance at the terminal.
    xdp_sys_.resize(grid.generators.size());
    for (std::size_t gi = 0; gi < grid.generators.size(); ++gi) {
      const auto& gen = grid.generators[gi];
      xdp_sys_[gi] = gen.xdp_pu * grid.mva_base / gen.mva_base;
      const auto i = static_cast<Eigen::Index>(grid.bus_index(gen.bus));
      y(i, i) += 1.0 / cplx(0.0, xdp_sys_[gi]);
    }

    for (Eigen::Index i = 0; i < n; ++i) {
      const bool has_gen = std::any_of(grid.generators.begin(), grid.generators.end(),
                                       [&](const auto& g) {
                                         return grid.bus_index(g.bus) == static_cast<int>(i);
                                       });
      if (grid.buses[i].type == BusType::kSlack && !has_gen)
        fixed_.push_back(i);
      else
        unknown_.push_back(i);
    }
    const auto nu = static_cast<Eigen::Index>(unknown_.size());
    const auto nf = static_cast<Eigen::Index>(fixed_.size());
    Eigen::MatrixXcd y_uu(nu, nu), y_uf(nu, nf);
    for (Eigen::Index a = 0; a < nu; ++a) {
      for (Eigen::Index b = 0; b < nu; ++b) y_uu(a, b) = y(unknown_[a], unknown_[b]);
      for (Eigen::Index b = 0; b < nf; ++b) y_uf(a, b) = y(unknown_[a], fixed_[b]);
    }
    lu_.compute(y_uu);
    v_fixed_.resize(nf);
    for (Eigen::Index b = 0; b < nf; ++b)
      v_fixed_(b) = std::polar(op.vm_pu(fixed_[b]), op.va_rad(fixed_[b]));
    i_fixed_ = nf > 0 ? Eigen::VectorXcd(-(y_uf * v_fixed_)) : Eigen::VectorXcd::Zero(nu);

    // Fluctuating slot bus positions (unknown partition index).
    for (const auto& slot : grid.fluct_slots) {
      const auto bi = static_cast<Eigen::Index>(grid.bus_index(slot.bus));
      const auto it = std::find(unknown_.begin(), unknown_.end(), bi);
      if (it == unknown_.end())
        throw ConfigError("simulate: fluctuating slot at a fixed-voltage bus");
      slot_pos_.push_back(static_cast<Eigen::Index>(it - unknown_.begin()));
    }

    v_guess_.resize(nu);
    for (Eigen::Index a = 0; a < nu; ++a)
      v_guess_(a) = std::polar(op.vm_pu(unknown_[a]), op.va_rad(unknown_[a]));
  }

  /// Solve bus voltages for rotor angles/EMFs and per-slot powers (MW).
  /// Returns voltages over the unknown partition; throws SolveError on
  /// fixed-point non-convergence.
  Eigen::VectorXcd solve(const Eigen::VectorXd& delta, const Eigen::VectorXd& emf,
                         const std::vector<double>& slot_mw) const {
    const auto nu = static_cast<Eigen::Index>(unknown_.size());
    Eigen::VectorXcd i_src = i_fixed_;
    for (std::size_t gi = 0; gi < grid_.generators.size(); ++gi) {
      const auto bi = static_cast<Eigen::Index>(grid_.bus_index(grid_.generators[gi].bus));
      const auto it = std::find(unknown_.begin(), unknown_.end(), bi);
      const auto pos = static_cast<Eigen::Index>(it - unknown_.begin());
      i_src(pos) += std::polar(emf(gi), delta(gi)) / cplx(0.0, xdp_sys_[gi]);
    }
    Eigen::VectorXcd v = v_guess_;
    for (int iter = 0; iter < max_iters_; ++iter) {
      Eigen::VectorXcd rhs = i_src;
      for (std::size_t si = 0; si < slot_pos_.size(); ++si) {
        const cplx s(slot_mw[si] / grid_.mva_base, 0.0);
        rhs(slot_pos_[si]) -= std::conj(s / v(slot_pos_[si]));
      }
      Eigen::VectorXcd v_next = lu_.solve(rhs);
      const double dv = (v_next - v).lpNorm<Eigen::Infinity>();
      v = v_next;
      if (dv < tol_) {
        v_guess_ = v;  // warm start for the next call
        return v;
      }
    }
    throw SolveError("network fixed-point did not converge");
  }

  /// Electrical power of every machine given solved voltages.
  Eigen::VectorXd electrical_power(const Eigen::VectorXd& delta, const Eigen::VectorXd& emf,
                                   const Eigen::VectorXcd& v) const {
    Eigen::VectorXd pe(grid_.generators.size());
    for (std::size_t gi = 0; gi < grid_.generators.size(); ++gi) {
      const auto bi = static_cast<Eigen::Index>(grid_.bus_index(grid_.generators[gi].bus));
      const auto it = std::find(unknown_.begin(), unknown_.end(), bi);
      const auto pos = static_cast<Eigen::Index>(it - unknown_.begin());
      const cplx e = std::polar(emf(gi), delta(gi));
      const cplx i_gen = (e - v(pos)) / cplx(0.0, xdp_sys_[gi]);
      pe(gi) = (e * std::conj(i_gen)).real();
    }
    return pe;
  }

  /// Full-length voltage magnitude vector in bus order.
  Eigen::VectorXd full_voltage(const Eigen::VectorXcd& v_unknown) const {
    Eigen::VectorXd vm(grid_.buses.size());
    for (std::size_t a = 0; a < unknown_.size(); ++a)
      vm(unknown_[a]) = std::abs(v_unknown(static_cast<Eigen::Index>(a)));
    for (std::size_t b = 0; b < fixed_.size(); ++b)
      vm(fixed_[b]) = std::abs(v_fixed_(static_cast<Eigen::Index>(b)));
    return vm;
  }

 private:
  const GridModel& grid_;
  double tol_;
  int max_iters_;
  std::vector<Eigen::Index> unknown_, fixed_;
  std::vector<Eigen::Index> slot_pos_;
  std::vector<double> xdp_sys_;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu_;
  Eigen::VectorXcd v_fixed_;
  Eigen::VectorXcd i_fixed_;
  mutable Eigen::VectorXcd v_guess_;
};

struct MachineConstants {
  Eigen::VectorXd two_h;  // 2H on system base
  Eigen::VectorXd d;      // damping on system base
};

MachineConstants machine_constants(const GridModel& grid) {
  MachineConstants mc;
  const auto ng = static_cast<Eigen::Index>(grid.generators.size());
  mc.two_h.resize(ng);
  mc.d.resize(ng);
  for (Eigen::Index gi = 0; gi < ng; ++gi) {
    const auto& gen = grid.generators[gi];
    const double ratio = gen.mva_base / grid.mva_base;
    mc.two_h(gi) = 2.0 * gen.h_s * ratio;
    mc.d(gi) = gen.d_pu * ratio;
  }
  return mc;
}

std::vector<double> slot_powers_at(const GridModel& grid,
                                   const std::map<int, workload::PowerTrace>& forcings,
                                   double t) {
  std::vector<double> mw;
  mw.reserve(grid.fluct_slots.size());
  for (const auto& slot : grid.fluct_slots) {
    const auto it = forcings.find(slot.bus);
    mw.push_back(it == forcings.end() ? slot.nominal_mw : it->second.value_at(t));
  }
  return mw;
}

}  // namespace

std::vector<double> SimResult::gen_frequency_series(int gen_index) const {
  std::vector<double> s;
  s.reserve(freq_hz.size());
  for (const auto& v : freq_hz) s.push_back(v(gen_index));
  return s;
}

std::vector<double> SimResult::gen_angle_series(int gen_index) const {
  std::vector<double> s;
  s.reserve(angle_rad.size());
  for (const auto& v : angle_rad) s.push_back(v(gen_index));
  return s;
}

DynamicState initialize_dynamics(const GridModel& grid, const OperatingPoint& op) {
  if (grid.generators.empty()) throw ConfigError("initialize_dynamics: no generators");
  if (op.vm_pu.size() != static_cast<Eigen::Index>(grid.buses.size()) ||
      op.delta_rad.size() != static_cast<Eigen::Index>(grid.generators.size()))
    throw ConfigError("initialize_dynamics: operating point does not match grid");

  DynamicState st;
  st.delta_rad = op.delta_rad;
  st.omega_pu = Eigen::VectorXd::Zero(op.delta_rad.size());
  st.emf_pu = op.emf_pu;

  NetworkSolver net(grid, op, 1e-12, 50);
  std::vector<double> nominal;
  for (const auto& slot : grid.fluct_slots) nominal.push_back(slot.nominal_mw);
  const Eigen::VectorXcd v = net.solve(st.delta_rad, st.emf_pu, nominal);
  st.pm_pu = net.electrical_power(st.delta_rad, st.emf_pu, v);
  return st;
}

double equilibrium_residual(const GridModel& grid, const OperatingPoint& op,
                            const DynamicState& state) {
  NetworkSolver net(grid, op, 1e-12, 50);
  std::vector<double> nominal;
  for (const auto& slot : grid.fluct_slots) nominal.push_back(slot.nominal_mw);
  const Eigen::VectorXcd v = net.solve(state.delta_rad, state.emf_pu, nominal);
  const Eigen::VectorXd pe = net.electrical_power(state.delta_rad, state.emf_pu, v);
  const MachineConstants mc = machine_constants(grid);
  double worst = 0.0;
  for (Eigen::Index gi = 0; gi < pe.size(); ++gi) {
    const double dw = (state.pm_pu(gi) - pe(gi) - mc.d(gi) * state.omega_pu(gi)) /
                      mc.two_h(gi);
    worst = std::max(worst, std::abs(dw));
  }
  return worst;
}

Eigen::VectorXd rotor_accelerations(const GridModel& grid, const OperatingPoint& op,
                                    const DynamicState& state,
                                    const std::vector<double>& slot_mw) {
  std::vector<double> mw = slot_mw;
  if (mw.empty())
    for (const auto& slot : grid.fluct_slots) mw.push_back(slot.nominal_mw);
  if (mw.size() != grid.fluct_slots.size())
    throw ConfigError("rotor_accelerations: slot power count mismatch");
  NetworkSolver net(grid, op, 1e-12, 50);
  const Eigen::VectorXcd v = net.solve(state.delta_rad, state.emf_pu, mw);
  const Eigen::VectorXd pe = net.electrical_power(state.delta_rad, state.emf_pu, v);
  const MachineConstants mc = machine_constants(grid);
  return (state.pm_pu - pe - mc.d.cwiseProduct(state.omega_pu)).cwiseQuotient(mc.two_h);
}

SimResult simulate(const GridModel& grid, const std::map<int, workload::PowerTrace>& forcings,
                   const SimOptions& opts) {
  opts.validate();
  for (const auto& [bus, trace] : forcings) {
    const bool has_slot = std::any_of(grid.fluct_slots.begin(), grid.fluct_slots.end(),
                                      [&](const auto& s) { return s.bus == bus; });
    if (!has_slot)
      throw ConfigError("simulate: forcing at bus " + std::to_string(bus) +
                        " without a registered fluctuating slot");
    const double t_end = trace.t0_s + trace.dt_s * static_cast<double>(trace.size() - 1);
    if (t_end + 1e-9 < opts.horizon_s)
      throw ConfigError("simulate: forcing trace does not cover the horizon");
  }

  const OperatingPoint op = netmodel::solve_power_flow(grid);
  DynamicState st = initialize_dynamics(grid, op);
  if (!opts.initial_angle_offset_rad.empty()) {
    if (opts.initial_angle_offset_rad.size() != grid.generators.size())
      throw ConfigError("simulate: initial angle offset count does not match generators");
    for (std::size_t gi = 0; gi < opts.initial_angle_offset_rad.size(); ++gi)
      st.delta_rad(static_cast<Eigen::Index>(gi)) += opts.initial_angle_offset_rad[gi];
  }
  NetworkSolver net(grid, op, opts.network_tol_pu, opts.max_network_iters);
  const MachineConstants mc = machine_constants(grid);
  const double omega_s = grid.omega_s();
  const auto ng = st.delta_rad.size();

  SimResult res;
  for (const auto& gen : grid.generators) res.gen_buses.push_back(gen.bus);
  for (const auto& bus : grid.buses) res.bus_ids.push_back(bus.id);

  struct Deriv {
    Eigen::VectorXd ddelta, domega;
  };
  auto rhs = [&](const Eigen::VectorXd& delta, const Eigen::VectorXd& omega, double t) {
    const auto slot_mw = slot_powers_at(grid, forcings, t);
    const Eigen::VectorXcd v = net.solve(delta, st.emf_pu, slot_mw);
    const Eigen::VectorXd pe = net.electrical_power(delta, st.emf_pu, v);
    Deriv d;
    d.ddelta = omega_s * omega;
    d.domega = (st.pm_pu - pe - mc.d.cwiseProduct(omega)).cwiseQuotient(mc.two_h);
    return d;
  };

  const auto n_steps = static_cast<std::size_t>(std::llround(opts.horizon_s / opts.dt_s));
  res.time_s.reserve(n_steps + 1);
  Eigen::VectorXd delta = st.delta_rad, omega = Eigen::VectorXd::Zero(ng);

  auto record = [&](double t) {
    const auto slot_mw = slot_powers_at(grid, forcings, t);
    const Eigen::VectorXcd v = net.solve(delta, st.emf_pu, slot_mw);
    res.time_s.push_back(t);
    Eigen::VectorXd f(ng);
    for (Eigen::Index gi = 0; gi < ng; ++gi)
      f(gi) = grid.f_nominal_hz * (1.0 + omega(gi));
    res.freq_hz.push_back(f);
    res.angle_rad.push_back(delta);
    res.voltage_pu.push_back(net.full_voltage(v));
    return res.voltage_pu.back().minCoeff();
  };

  try {
    if (record(0.0) < opts.voltage_floor_pu)
      throw SolveError("low-voltage failure at t=0");
    const double h = opts.dt_s;
    for (std::size_t k = 0; k < n_steps; ++k) {
      const double t = static_cast<double>(k) * h;
      if (opts.integrator == Integrator::kRk4) {
        const Deriv k1 = rhs(delta, omega, t);
        const Deriv k2 = rhs(delta + 0.5 * h * k1.ddelta, omega + 0.5 * h * k1.domega,
                             t + 0.5 * h);
        const Deriv k3 = rhs(delta + 0.5 * h * k2.ddelta, omega + 0.5 * h * k2.domega,
                             t + 0.5 * h);
        const Deriv k4 = rhs(delta + h * k3.ddelta, omega + h * k3.domega, t + h);
        delta += (h / 6.0) * (k1.ddelta + 2.0 * k2.ddelta + 2.0 * k3.ddelta + k4.ddelta);
        omega += (h / 6.0) * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega);
      } else {
        // Implicit trapezoidal via fixed-point on the end-of-step state.
        const Deriv f0 = rhs(delta, omega, t);
        Eigen::VectorXd d_next = delta + h * f0.ddelta;
        Eigen::VectorXd w_next = omega + h * f0.domega;
        for (int it = 0; it < 50; ++it) {
          const Deriv f1 = rhs(d_next, w_next, t + h);
          const Eigen::VectorXd d_new = delta + 0.5 * h * (f0.ddelta + f1.ddelta);
          const Eigen::VectorXd w_new = omega + 0.5 * h * (f0.domega + f1.domega);
          const double change = (d_new - d_next).lpNorm<Eigen::Infinity>() +
                                (w_new - w_next).lpNorm<Eigen::Infinity>();
          d_next = d_new;
          w_next = w_new;
          if (change < 1e-13) break;
        }
        delta = d_next;
        omega = w_next;
      }
      if (!delta.allFinite() || !omega.allFinite())
        throw SolveError("state became non-finite");
      const double v_min = record(static_cast<double>(k + 1) * h);
      if (v_min < opts.voltage_floor_pu)
        throw SolveError("low-voltage failure (min voltage " + std::to_string(v_min) +
                         " pu)");
    }
  } catch (const SolveError& e) {
    res.aborted = true;
    res.abort_time_s = res.time_s.empty() ? 0.0 : res.time_s.back();
    res.abort_reason = e.what();
  }
  return res;
}

double peak_to_peak(const std::vector<double>& series, const std::vector<double>& time_s,
                    double t_start, double t_end) {
  if (series.empty()) throw ConfigError("peak_to_peak: empty series");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  bool any = false;
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (!time_s.empty()) {
      const double t = time_s[k];
      if (t_start >= 0.0 && t < t_start) continue;
      if (t_end >= 0.0 && t > t_end) continue;
    }
    lo = std::min(lo, series[k]);
    hi = std::max(hi, series[k]);
    any = true;
  }
  if (!any) throw ConfigError("peak_to_peak: empty analysis window");
  return hi - lo;
}

void export_sim_result(const SimResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto write_matrix = [&](const std::string& name, const std::vector<Eigen::VectorXd>& rows,
                          const std::string& col_prefix, const std::vector<int>& col_ids) {
    std::ofstream out(fs::path(out_dir) / name);
    if (!out) throw ConfigError("cannot open for write: " + name);
    out << "time_s";
    for (int id : col_ids) out << "," << col_prefix << id;
    out << "\n";
    out.precision(17);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out << result.time_s[k];
      for (Eigen::Index c = 0; c < rows[k].size(); ++c) out << "," << rows[k](c);
      out << "\n";
    }
  };
  write_matrix("frequency_hz.csv", result.freq_hz, "gen_", result.gen_buses);
  write_matrix("angle_rad.csv", result.angle_rad, "gen_", result.gen_buses);
  write_matrix("voltage_pu.csv", result.voltage_pu, "bus_", result.bus_ids);

  nlohmann::json meta;
  meta["seed"] = result.seed;
  meta["scenario_id"] = result.scenario_id;
  meta["aborted"] = result.aborted;
  meta["abort_time_s"] = result.abort_time_s;
  meta["abort_reason"] = result.abort_reason;
  meta["samples"] = result.time_s.size();
  std::ofstream out(fs::path(out_dir) / "sim_meta.json");
  out << meta.dump(2) << "\n";
}

}  // namespace gridosc::dynsim
