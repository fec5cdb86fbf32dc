#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridosc/netmodel.hpp"
#include "gridosc/workload.hpp"

namespace gridosc::dynsim {

enum class Integrator { kRk4, kTrapezoidal };

struct SimOptions {
  double dt_s = 0.01;
  double horizon_s = 10.0;
  Integrator integrator = Integrator::kRk4;
  double network_tol_pu = 1e-8;
  double voltage_floor_pu = 0.4;  // run aborts below
  int max_network_iters = 20;
  // optional per-generator initial rotor-angle offset (rad) for ringdown
  // studies; empty means start exactly at the equilibrium
  std::vector<double> initial_angle_offset_rad;

  void validate() const {
    if (!(dt_s > 0.0)) throw ConfigError("SimOptions: dt must be positive");
    if (!(horizon_s >= dt_s)) throw ConfigError("SimOptions: horizon < dt");
    if (!(network_tol_pu > 0.0)) throw ConfigError("SimOptions: tolerance must be positive");
  }
};

struct SimResult {
  std::vector<double> time_s;
  // time-major: freq_hz[k] is the per-generator vector at step k
  std::vector<Eigen::VectorXd> freq_hz;
  std::vector<Eigen::VectorXd> angle_rad;
  std::vector<Eigen::VectorXd> voltage_pu;  // per bus
  std::vector<int> gen_buses;
  std::vector<int> bus_ids;
  bool aborted = false;
  double abort_time_s = 0.0;
  std::string abort_reason;
  std::uint64_t seed = 0;
  std::string scenario_id;

  std::vector<double> gen_frequency_series(int gen_index) const;
  std::vector<double> gen_angle_series(int gen_index) const;
};

/// Rotor states and the factorized dynamic network.
struct DynamicState {
  Eigen::VectorXd delta_rad;   // per generator
  Eigen::VectorXd omega_pu;    // speed deviation, pu
  Eigen::VectorXd emf_pu;
  Eigen::VectorXd pm_pu;       // mechanical power, balances Pe at nominal forcing
};

/// Equilibrium dynamic state from a solved operating point. Pm is set so
/// the rotor accelerations vanish with every fluctuating slot at nominal.
DynamicState initialize_dynamics(const netmodel::GridModel& grid,
                                 const netmodel::OperatingPoint& op);

/// Max |d omega / dt| of the dynamic equations at a state with slots at
/// nominal; used to verify equilibrium initialization.
double equilibrium_residual(const netmodel::GridModel& grid,
                            const netmodel::OperatingPoint& op, const DynamicState& state);

/// Signed rotor accelerations (d omega / dt, pu/s) at the given rotor angles
/// and speeds with each fluctuating slot held at the listed absolute MW
/// (ordered as grid.fluct_slots; empty keeps every slot at nominal).
Eigen::VectorXd rotor_accelerations(const netmodel::GridModel& grid,
                                    const netmodel::OperatingPoint& op,
                                    const DynamicState& state,
                                    const std::vector<double>& slot_mw = {});

/// Integrate the swing equations with fluctuating slots driven by the given
/// traces (absolute MW of each slot; buses without a trace stay at nominal).
SimResult simulate(const netmodel::GridModel& grid,
                   const std::map<int, workload::PowerTrace>& forcings,
                   const SimOptions& opts);

/// max - min over [t_start, t_end] (whole series by default).
double peak_to_peak(const std::vector<double>& series, const std::vector<double>& time_s = {},
                    double t_start = -1.0, double t_end = -1.0);

// SimResult export: one CSV per quantity plus a JSON metadata sidecar.
void export_sim_result(const SimResult& result, const std::string& out_dir);

}  // namespace gridosc::dynsim
