#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridosc/common.hpp"
#include "gridosc/netmodel.hpp"

namespace gridosc::modal {

/// One oscillatory mode sigma +/- j*2*pi*f with its fitted amplitude/phase.
struct ModeEstimate {
  double frequency_hz = 0.0;
  double sigma_per_s = 0.0;   // real part of the continuous pole
  double damping_ratio = 0.0; // -sigma / sqrt(sigma^2 + omega^2)
  double amplitude = 0.0;
  double phase_rad = 0.0;
  double pseudo_energy = 0.0;
  bool unstable = false;      // sigma > 0
};

enum class Window { kRectangular, kHann };

struct Spectrum {
  std::vector<double> freq_hz;
  std::vector<double> amplitude;
  std::string window;
  double resolution_hz = 0.0;
};

/// Reduced classical-model state matrix around an operating point,
/// 2n x 2n for n generators with states [delta; omega_pu].
/// Loads (including fluctuating slots at nominal) are folded as constant
/// admittances and the network is Kron-reduced to machine internal nodes.
Eigen::MatrixXd linearize(const netmodel::GridModel& grid, const netmodel::OperatingPoint& op);

/// Electrical power of each machine as a function of rotor angles on the
/// Kron-reduced network; shared by the simulator and by finite-difference
/// checks of the analytic Jacobian.
class ReducedNetwork {
 public:
  ReducedNetwork(const netmodel::GridModel& grid, const netmodel::OperatingPoint& op);

  Eigen::VectorXd electrical_power(const Eigen::VectorXd& gen_angles_rad) const;
  /// d Pe_i / d delta_j, analytic.
  Eigen::MatrixXd power_jacobian(const Eigen::VectorXd& gen_angles_rad) const;

  int n_generators() const { return n_gen_; }
  const Eigen::VectorXd& emf_magnitudes() const { return emf_; }
  const Eigen::VectorXd& initial_angles() const { return angle0_; }

 private:
  int n_gen_ = 0;
  Eigen::VectorXd emf_;        // generators then fixed sources
  Eigen::VectorXd angle0_;     // generator rotor angles at the op
  Eigen::VectorXd fixed_angles_;
  Eigen::MatrixXcd y_red_;     // kept nodes: generators first, fixed sources after
};

/// Conjugate pairs of an eigen decomposition collapsed to omega >= 0 modes,
/// sorted by frequency. Real eigenvalues are not reported as modes.
std::vector<ModeEstimate> eigen_modes(const Eigen::MatrixXd& state_matrix);

/// |left_ik * right_ki| participation magnitudes, normalized per mode to a
/// maximum of 1. Rows are states, columns are modes (eigenvalue order).
Eigen::MatrixXd participation(const Eigen::MatrixXd& state_matrix);

/// Prony fit: linear-prediction least squares, characteristic roots, then
/// residues. Modes below 1% of the largest amplitude are discarded; result
/// sorted by amplitude, descending. `condition_out`, when given, receives
/// the LP system condition number.
std::vector<ModeEstimate> prony_fit(const std::vector<double>& signal, double dt_s,
                                    int model_order, double* condition_out = nullptr);

/// Single-sided amplitude spectrum, coherent-gain corrected.
Spectrum fft_spectrum(const std::vector<double>& signal, double dt_s, Window window);

/// Energy of a damped sinusoid envelope over [0, T]:
/// A^2 (e^{2 sigma T} - 1) / (2 sigma), with limit A^2 T at sigma = 0.
double pseudo_energy(double amplitude, double sigma_per_s, double horizon_s);

/// Normalize a set of energies by their maximum (no-op on an empty set).
std::vector<double> normalize_energies(const std::vector<double>& energies);

struct ShapeEntry {
  double amplitude = 0.0;
  double phase_rad = 0.0;  // in (-pi, pi], largest-amplitude entry rotated to 0
};

/// Per-signal complex residue of the Prony mode nearest target_freq within
/// tolerance. Signals lacking the mode are excluded and listed in
/// `excluded_out` when given.
std::map<std::string, ShapeEntry> mode_shape(
    const std::map<std::string, std::vector<double>>& signals, double dt_s,
    double target_freq_hz, double tolerance_hz, int model_order = 0,
    std::vector<std::string>* excluded_out = nullptr);

}  // namespace gridosc::modal
