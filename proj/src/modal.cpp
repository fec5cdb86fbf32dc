#include "gridosc/modal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <unsupported/Eigen/FFT>

namespace gridosc::modal {

using cplx = std::complex<double>;
using netmodel::BusType;
using netmodel::GridModel;
using netmodel::OperatingPoint;

ReducedNetwork::ReducedNetwork(const GridModel& grid, const OperatingPoint& op) {
  const auto n_bus = static_cast<Eigen::Index>(grid.buses.size());
  n_gen_ = static_cast<int>(grid.generators.size());
  if (n_gen_ == 0) throw ConfigError("ReducedNetwork: no generators");

  Eigen::MatrixXcd y = netmodel::build_ybus(grid);
  // Constant loads and fluctuating slots at nominal folded as admittances.
  for (const auto& l : grid.loads) {
    const auto i = static_cast<Eigen::Index>(grid.bus_index(l.bus));
    y(i, i) += std::conj(cplx(l.p_mw, l.q_mvar) / grid.mva_base) /
               (op.vm_pu(i) * op.vm_pu(i));
  }
  for (const auto& slot : grid.fluct_slots) {
    const auto i = static_cast<Eigen::Index>(grid.bus_index(slot.bus));
    y(i, i) += cplx(slot.nominal_mw / grid.mva_base, 0.0) / (op.vm_pu(i) * op.vm_pu(i));
  }

  // Augmented system: network buses then one internal node per machine.
  const auto n_aug = n_bus + n_gen_;
  Eigen::MatrixXcd y_aug = Eigen::MatrixXcd::Zero(n_aug, n_aug);
  y_aug.topLeftCorner(n_bus, n_bus) = y;
  for (int gi = 0; gi < n_gen_; ++gi) {
    const auto& gen = grid.generators[gi];
    const auto bi = static_cast<Eigen::Index>(grid.bus_index(gen.bus));
    const auto ii = n_bus + gi;
    const cplx y_m = 1.0 / cplx(0.0, gen.xdp_pu * grid.mva_base / gen.mva_base);
    y_aug(bi, bi) += y_m;
    y_aug(ii, ii) += y_m;
    y_aug(bi, ii) -= y_m;
    y_aug(ii, bi) -= y_m;
  }

  // Kept nodes: machine internal nodes, then slack buses without a machine
  // (infinite buses, fixed angle). Everything else is Kron-eliminated.
  std::vector<Eigen::Index> kept, elim;
  for (int gi = 0; gi < n_gen_; ++gi) kept.push_back(n_bus + gi);
  std::vector<double> fixed_emf, fixed_ang;
  for (Eigen::Index i = 0; i < n_bus; ++i) {
    const bool has_gen =
        std::any_of(grid.generators.begin(), grid.generators.end(), [&](const auto& g) {
          return grid.bus_index(g.bus) == static_cast<int>(i);
        });
    if (grid.buses[i].type == BusType::kSlack && !has_gen) {
      kept.push_back(i);
      fixed_emf.push_back(op.vm_pu(i));
      fixed_ang.push_back(op.va_rad(i));
    } else {
      elim.push_back(i);
    }
  }
  const auto nk = static_cast<Eigen::Index>(kept.size());
  const auto ne = static_cast<Eigen::Index>(elim.size());
  Eigen::MatrixXcd y_kk(nk, nk), y_ke(nk, ne), y_ek(ne, nk), y_ee(ne, ne);
  for (Eigen::Index a = 0; a < nk; ++a) {
    for (Eigen::Index b = 0; b < nk; ++b) y_kk(a, b) = y_aug(kept[a], kept[b]);
    for (Eigen::Index b = 0; b < ne; ++b) y_ke(a, b) = y_aug(kept[a], elim[b]);
  }
  for (Eigen::Index a = 0; a < ne; ++a) {
    for (Eigen::Index b = 0; b < nk; ++b) y_ek(a, b) = y_aug(elim[a], kept[b]);
    for (Eigen::Index b = 0; b < ne; ++b) y_ee(a, b) = y_aug(elim[a], elim[b]);
  }
  if (ne > 0) {
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(y_ee);
    y_red_ = y_kk - y_ke * lu.solve(y_ek);
    if (!y_red_.allFinite())
      throw SolveError("ReducedNetwork: singular reduction (islanded generator?)");
  } else {
    y_red_ = y_kk;
  }

  emf_.resize(nk);
  angle0_.resize(n_gen_);
  fixed_angles_.resize(static_cast<Eigen::Index>(fixed_ang.size()));
  for (int gi = 0; gi < n_gen_; ++gi) {
    emf_(gi) = op.emf_pu(gi);
    angle0_(gi) = op.delta_rad(gi);
  }
  for (std::size_t s = 0; s < fixed_emf.size(); ++s) {
    emf_(n_gen_ + static_cast<Eigen::Index>(s)) = fixed_emf[s];
    fixed_angles_(static_cast<Eigen::Index>(s)) = fixed_ang[s];
  }
}

Eigen::VectorXd ReducedNetwork::electrical_power(const Eigen::VectorXd& gen_angles) const {
  const auto nk = y_red_.rows();
  Eigen::VectorXd theta(nk);
  theta.head(n_gen_) = gen_angles;
  theta.tail(nk - n_gen_) = fixed_angles_;
  Eigen::VectorXd pe(n_gen_);
  for (int i = 0; i < n_gen_; ++i) {
    double p = 0.0;
    for (Eigen::Index j = 0; j < nk; ++j) {
      const double g = y_red_(i, j).real();
      const double b = y_red_(i, j).imag();
      const double dij = theta(i) - theta(j);
      p += emf_(i) * emf_(j) * (g * std::cos(dij) + b * std::sin(dij));
    }
    pe(i) = p;
  }
  return pe;
}

Eigen::MatrixXd ReducedNetwork::power_jacobian(const Eigen::VectorXd& gen_angles) const {
  const auto nk = y_red_.rows();
  Eigen::VectorXd theta(nk);
  theta.head(n_gen_) = gen_angles;
  theta.tail(nk - n_gen_) = fixed_angles_;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_gen_, n_gen_);
  for (int i = 0; i < n_gen_; ++i) {
    double diag = 0.0;
    for (Eigen::Index j = 0; j < nk; ++j) {
      if (j == i) continue;
      const double g = y_red_(i, j).real();
      const double b = y_red_(i, j).imag();
      const double dij = theta(i) - theta(j);
      // d Pe_i / d delta_j for j != i; fixed sources only contribute to
      // the diagonal.
      const double coupling = emf_(i) * emf_(j) * (g * std::sin(dij) - b * std::cos(dij));
      if (j < n_gen_) jac(i, static_cast<int>(j)) = coupling;
      diag -= coupling;
    }
    jac(i, i) = diag;
  }
  return jac;
}

Eigen::MatrixXd linearize(const GridModel& grid, const OperatingPoint& op) {
  const ReducedNetwork net(grid, op);
  const int n = net.n_generators();
  const Eigen::MatrixXd jac = net.power_jacobian(net.initial_angles());
  Eigen::VectorXd two_h(n), damping(n);
  for (int gi = 0; gi < n; ++gi) {
    const auto& gen = grid.generators[gi];
    const double ratio = gen.mva_base / grid.mva_base;
    two_h(gi) = 2.0 * gen.h_s * ratio;
    damping(gi) = gen.d_pu * ratio;
  }
  // States [delta; omega_pu]: d delta = omega_s * omega,
  // 2H d omega = -dPe/ddelta * delta - D * omega.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  a.topRightCorner(n, n) = grid.omega_s() * Eigen::MatrixXd::Identity(n, n);
  a.bottomLeftCorner(n, n) = -(two_h.cwiseInverse().asDiagonal() * jac);
  a.bottomRightCorner(n, n) =
      (-damping.cwiseQuotient(two_h)).asDiagonal().toDenseMatrix();
  return a;
}

std::vector<ModeEstimate> eigen_modes(const Eigen::MatrixXd& state_matrix) {
  if (state_matrix.rows() != state_matrix.cols())
    throw ConfigError("eigen_modes: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> es(state_matrix);
  if (es.info() != Eigen::Success) throw SolveError("eigen_modes: solver failure");
  std::vector<ModeEstimate> modes;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    const cplx lam = es.eigenvalues()(k);
    if (lam.imag() <= 1e-9) continue;  // keep one of each conjugate pair
    ModeEstimate m;
    m.sigma_per_s = lam.real();
    m.frequency_hz = lam.imag() / (2.0 * M_PI);
    m.damping_ratio = -lam.real() / std::abs(lam);
    m.unstable = lam.real() > 0.0;
    modes.push_back(m);
  }
  std::sort(modes.begin(), modes.end(),
            [](const auto& a, const auto& b) { return a.frequency_hz < b.frequency_hz; });
  return modes;
}

Eigen::MatrixXd participation(const Eigen::MatrixXd& state_matrix) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(state_matrix);
  if (es.info() != Eigen::Success) throw SolveError("participation: solver failure");
  const Eigen::MatrixXcd right = es.eigenvectors();
  // Left eigenvectors as rows of the (pseudo-)inverse; the pseudo-inverse
  // covers near-defective matrices with a tolerance-based rank decision.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(right);
  const Eigen::MatrixXcd left = cod.pseudoInverse();
  const auto n = state_matrix.rows();
  Eigen::MatrixXd p(n, n);
  for (Eigen::Index mode = 0; mode < n; ++mode)
    for (Eigen::Index state = 0; state < n; ++state)
      p(state, mode) = std::abs(left(mode, state) * right(state, mode));
  for (Eigen::Index mode = 0; mode < n; ++mode) {
    const double mx = p.col(mode).maxCoeff();
    if (mx > 0.0) p.col(mode) /= mx;
  }
  return p;
}

namespace {

int default_order(std::size_t n) {
  return std::max(2, std::min(20, static_cast<int>(n / 10)));
}

struct PronyRaw {
  std::vector<cplx> poles_s;    // continuous
  std::vector<cplx> residues;
};

PronyRaw prony_core(const std::vector<double>& signal, double dt, int order,
                    double* condition_out) {
  const auto n = static_cast<Eigen::Index>(signal.size());
  // The prediction window is taken much longer than the wanted model order
  // and the normal system is rank-truncated to the order. The extra length
  // pushes noise into the discarded subspace, which is what keeps pole
  // estimates usable on measured (rather than synthetic) ringdowns.
  const Eigen::Index p =
      std::max<Eigen::Index>(order, std::min<Eigen::Index>(n / 3, std::max(100, 4 * order)));

  // Forward linear prediction: x[k] = sum_j c_j x[k-j], k = p..n-1.
  Eigen::MatrixXd a(n - p, p);
  Eigen::VectorXd b(n - p);
  for (Eigen::Index r = 0; r < n - p; ++r) {
    b(r) = signal[static_cast<std::size_t>(p + r)];
    for (Eigen::Index j = 0; j < p; ++j)
      a(r, j) = signal[static_cast<std::size_t>(p + r - 1 - j)];
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(0) > 0.0)) throw SolveError("prony_fit: zero signal after detrending");
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > 1e-10 * sv(0) &&
         rank < static_cast<Eigen::Index>(order))
    ++rank;
  if (rank == 0) throw SolveError("prony_fit: singular linear-prediction system");
  if (condition_out) *condition_out = sv(0) / sv(rank - 1);

  // Truncated-SVD solve of the prediction coefficients.
  const Eigen::VectorXd ub = svd.matrixU().leftCols(rank).transpose() * b;
  const Eigen::VectorXd c =
      svd.matrixV().leftCols(rank) * ub.cwiseQuotient(sv.head(rank));

  // Roots of z^p - c_1 z^{p-1} - ... - c_p via the companion matrix.
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) comp(0, j) = c(j);
  for (Eigen::Index j = 1; j < p; ++j) comp(j, j - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp);
  if (es.info() != Eigen::Success) throw SolveError("prony_fit: root extraction failure");

  PronyRaw raw;
  std::vector<cplx> z;
  for (Eigen::Index k = 0; k < p; ++k) {
    const cplx zk = es.eigenvalues()(k);
    // near-zero roots carry no information; strongly growing roots are
    // prediction artifacts and would overflow the residue system
    if (std::abs(zk) < 1e-12 || std::abs(zk) > 1.5) continue;
    z.push_back(zk);
    raw.poles_s.push_back(std::log(zk) / dt);
  }
  if (z.empty()) throw SolveError("prony_fit: no usable characteristic roots");

  // Residues by complex least squares on the Vandermonde system.
  const auto m = static_cast<Eigen::Index>(z.size());
  Eigen::MatrixXcd v(n, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    cplx zn(1.0, 0.0);
    for (Eigen::Index r = 0; r < n; ++r) {
      v(r, k) = zn;
      zn *= z[static_cast<std::size_t>(k)];
    }
  }
  Eigen::VectorXcd x(n);
  for (Eigen::Index r = 0; r < n; ++r) x(r) = signal[static_cast<std::size_t>(r)];
  const Eigen::VectorXcd r =
      v.completeOrthogonalDecomposition().solve(x);
  raw.residues.assign(r.begin(), r.end());
  return raw;
}

}  // namespace

std::vector<ModeEstimate> prony_fit(const std::vector<double>& signal, double dt_s,
                                    int model_order, double* condition_out) {
  if (!(dt_s > 0.0)) throw ConfigError("prony_fit: dt must be positive");
  if (model_order <= 0) model_order = default_order(signal.size());
  if (signal.size() < static_cast<std::size_t>(3 * model_order))
    throw ConfigError("prony_fit: signal length must be at least 3x model order");

  std::vector<double> x = signal;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (double& v : x) v -= mean;

  const PronyRaw raw = prony_core(x, dt_s, model_order, condition_out);
  const double horizon = dt_s * static_cast<double>(x.size());

  std::vector<ModeEstimate> modes;
  for (std::size_t k = 0; k < raw.poles_s.size(); ++k) {
    const cplx s = raw.poles_s[k];
    if (s.imag() <= 1e-9) continue;  // keep one pole per conjugate pair
    ModeEstimate m;
    m.sigma_per_s = s.real();
    m.frequency_hz = s.imag() / (2.0 * M_PI);
    m.damping_ratio = -s.real() / std::abs(s);
    m.amplitude = 2.0 * std::abs(raw.residues[k]);
    m.phase_rad = std::arg(raw.residues[k]);
    m.unstable = s.real() > 0.0;
    m.pseudo_energy = pseudo_energy(m.amplitude, m.sigma_per_s, horizon);
    modes.push_back(m);
  }
  if (!modes.empty()) {
    const double max_amp =
        std::max_element(modes.begin(), modes.end(), [](const auto& a, const auto& b) {
          return a.amplitude < b.amplitude;
        })->amplitude;
    std::erase_if(modes, [&](const auto& m) { return m.amplitude < 0.01 * max_amp; });
  }
  std::sort(modes.begin(), modes.end(),
            [](const auto& a, const auto& b) { return a.amplitude > b.amplitude; });
  return modes;
}

Spectrum fft_spectrum(const std::vector<double>& signal, double dt_s, Window window) {
  if (signal.size() < 2) throw ConfigError("fft_spectrum: need at least 2 samples");
  if (!(dt_s > 0.0)) throw ConfigError("fft_spectrum: dt must be positive");
  const auto n = signal.size();

  std::vector<double> w(n, 1.0);
  if (window == Window::kHann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) /
                                   static_cast<double>(n)));
  const double coherent_gain =
      std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);

  std::vector<double> xw(n);
  for (std::size_t i = 0; i < n; ++i) xw[i] = signal[i] * w[i];

  Eigen::FFT<double> fft;
  std::vector<cplx> out;
  fft.fwd(out, xw);

  Spectrum spec;
  spec.window = window == Window::kHann ? "hann" : "rectangular";
  spec.resolution_hz = 1.0 / (dt_s * static_cast<double>(n));
  const std::size_t n_bins = n / 2 + 1;
  spec.freq_hz.resize(n_bins);
  spec.amplitude.resize(n_bins);
  const double scale = 1.0 / (static_cast<double>(n) * coherent_gain);
  for (std::size_t k = 0; k < n_bins; ++k) {
    spec.freq_hz[k] = static_cast<double>(k) * spec.resolution_hz;
    const bool interior = k > 0 && !(n % 2 == 0 && k == n / 2);
    spec.amplitude[k] = std::abs(out[k]) * scale * (interior ? 2.0 : 1.0);
  }
  return spec;
}

double pseudo_energy(double amplitude, double sigma_per_s, double horizon_s) {
  if (!(horizon_s > 0.0)) throw ConfigError("pseudo_energy: T must be positive");
  if (sigma_per_s == 0.0) return amplitude * amplitude * horizon_s;
  return amplitude * amplitude * std::expm1(2.0 * sigma_per_s * horizon_s) /
         (2.0 * sigma_per_s);
}

std::vector<double> normalize_energies(const std::vector<double>& energies) {
  if (energies.empty()) return {};
  const double mx = *std::max_element(energies.begin(), energies.end());
  std::vector<double> out = energies;
  if (mx > 0.0)
    for (double& e : out) e /= mx;
  return out;
}

std::map<std::string, ShapeEntry> mode_shape(
    const std::map<std::string, std::vector<double>>& signals, double dt_s,
    double target_freq_hz, double tolerance_hz, int model_order,
    std::vector<std::string>* excluded_out) {
  std::map<std::string, ShapeEntry> shape;
  std::string anchor;
  double anchor_amp = -1.0;
  for (const auto& [name, sig] : signals) {
    const auto modes = prony_fit(sig, dt_s, model_order);
    const ModeEstimate* best = nullptr;
    for (const auto& m : modes) {
      if (std::abs(m.frequency_hz - target_freq_hz) > tolerance_hz) continue;
      if (!best || m.amplitude > best->amplitude) best = &m;
    }
    if (!best) {
      if (excluded_out) excluded_out->push_back(name);
      continue;
    }
    shape[name] = ShapeEntry{best->amplitude, best->phase_rad};
    if (best->amplitude > anchor_amp) {
      anchor_amp = best->amplitude;
      anchor = name;
    }
  }
  if (!shape.empty()) {
    const double ref = shape[anchor].phase_rad;
    for (auto& [name, entry] : shape) {
      double ph = entry.phase_rad - ref;
      while (ph <= -M_PI) ph += 2.0 * M_PI;
      while (ph > M_PI) ph -= 2.0 * M_PI;
      entry.phase_rad = ph;
    }
  }
  return shape;
}

}  // namespace gridosc::modal
