#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridosc/common.hpp"
#include "gridosc/workload.hpp"

namespace gridosc::netmodel {

enum class BusType { kSlack, kPV, kPQ };

struct Bus {
  int id = 0;
  BusType type = BusType::kPQ;
  double base_kv = 0.0;
  double shunt_g_pu = 0.0;
  double shunt_b_pu = 0.0;
  double vm_setpoint_pu = 1.0;  // used when a slack bus hosts no generator
};

struct Branch {
  int from = 0;
  int to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
  double charging_b_pu = 0.0;  // total line charging
  double tap = 1.0;
};

/// Classical-model synchronous machine. H, D, x'd are given on the machine
/// MVA base and converted to the system base at load time.
struct Generator {
  int bus = 0;
  double h_s = 0.0;       // inertia constant, machine base
  double d_pu = 2.0;      // damping, machine base
  double xdp_pu = 0.0;    // transient reactance, machine base
  double mva_base = 0.0;
  double p_set_pu = 0.0;  // system base
  double v_set_pu = 1.0;
};

struct Load {
  int bus = 0;
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

/// Registered fluctuating-load slot at a bus; the constant-power component
/// the simulator drives with a PowerTrace.
struct FluctSlot {
  int bus = 0;
  double nominal_mw = 0.0;
  workload::WorkloadMix mix;
};

struct GridModel {
  double mva_base = 100.0;
  double f_nominal_hz = 60.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  std::vector<FluctSlot> fluct_slots;

  double omega_s() const { return 2.0 * M_PI * f_nominal_hz; }
  int bus_index(int bus_id) const;  // -1 when absent
  /// Total constant P load at a bus in MW (sum over load entries).
  double bus_load_mw(int bus_id) const;
};

struct DatacenterSpec {
  int bus = 0;
  double capacity_mw = 0.0;
  double steady_fraction = 0.8;
  double fluct_fraction = 0.2;
  workload::WorkloadMix mix;
};

/// Solved steady state.
struct OperatingPoint {
  Eigen::VectorXd vm_pu;      // per bus
  Eigen::VectorXd va_rad;     // per bus
  Eigen::VectorXd emf_pu;     // per generator
  Eigen::VectorXd delta_rad;  // per generator rotor angle
  Eigen::VectorXcd injection_pu;  // per-bus net complex injection
  double mismatch_norm = 0.0;
  int iterations = 0;
};

GridModel load_grid(const std::string& path);
GridModel parse_grid(const std::string& json_text);

Eigen::MatrixXcd build_ybus(const GridModel& grid);

/// Newton-Raphson from a flat start; max |P,Q mismatch| < tol within
/// max_iter iterations or a SolveError reporting the final mismatch.
OperatingPoint solve_power_flow(const GridModel& grid, double tol = 1e-8, int max_iter = 50);

/// Independent re-evaluation of the power-flow mismatch at an operating
/// point (used to cross-check the solver).
double power_flow_mismatch(const GridModel& grid, const OperatingPoint& op);

/// Replace dc.capacity of the bus's constant load by steady_fraction of it
/// and register a fluctuating slot of fluct_fraction * capacity, so the
/// nominal total equals the original load.
GridModel attach_datacenter(const GridModel& grid, const DatacenterSpec& dc);

GridModel scale_inertia(const GridModel& grid, double factor);

/// MVA-weighted mean of machine inertia constants (machine-base H).
double system_inertia(const GridModel& grid);

}  // namespace gridosc::netmodel
