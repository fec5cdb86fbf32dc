#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "gridosc/dynsim.hpp"
#include "gridosc/modal.hpp"
#include "gridosc/netmodel.hpp"

using namespace gridosc;
using namespace gridosc::modal;
using netmodel::GridModel;
using netmodel::OperatingPoint;

namespace {

std::string fixture(const char* name) {
  return std::string(GRIDOSC_FIXTURE_DIR) + "/" + name;
}

/// 2x2 real block with eigenvalues sigma +/- j*omega.
Eigen::MatrixXd spiral_block(double sigma, double omega) {
  Eigen::MatrixXd a(2, 2);
  a << sigma, omega, -omega, sigma;
  return a;
}

std::vector<double> damped_cosine(double amp, double sigma, double freq_hz, double phase,
                                  double dt, int n) {
  std::vector<double> y(n);
  for (int k = 0; k < n; ++k) {
    const double t = dt * k;
    y[k] = amp * std::exp(sigma * t) * std::cos(2.0 * M_PI * freq_hz * t + phase);
  }
  return y;
}

std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> y(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) y[k] = a[k] + b[k];
  return y;
}

double signal_rms(const std::vector<double>& y) {
  double ss = 0.0;
  for (double v : y) ss += v * v;
  return std::sqrt(ss / static_cast<double>(y.size()));
}

const ModeEstimate& nearest_mode(const std::vector<ModeEstimate>& modes, double f_hz) {
  REQUIRE(!modes.empty());
  std::size_t best = 0;
  for (std::size_t i = 1; i < modes.size(); ++i)
    if (std::abs(modes[i].frequency_hz - f_hz) < std::abs(modes[best].frequency_hz - f_hz))
      best = i;
  return modes[best];
}

}  // namespace

TEST_CASE("single machine against an infinite bus matches the closed form") {
  GridModel grid = netmodel::load_grid(fixture("smib.json"));
  grid.generators[0].d_pu = 0.0;
  const OperatingPoint op = netmodel::solve_power_flow(grid);
  const auto modes = eigen_modes(linearize(grid, op));
  REQUIRE(modes.size() == 1);
  // H = 3 s, E = V = 1, total reactance 0.5 -> synchronizing coefficient 2
  const double expected = std::sqrt(grid.omega_s() * 2.0 / (2.0 * 3.0)) / (2.0 * M_PI);
  CHECK(modes[0].frequency_hz == doctest::Approx(expected).epsilon(1e-3));
  CHECK(modes[0].frequency_hz == doctest::Approx(1.784).epsilon(1e-3));
  CHECK(std::abs(modes[0].damping_ratio) < 1e-9);
}

TEST_CASE("damped machines give strictly decaying oscillatory modes") {
  const GridModel grid = netmodel::load_grid(fixture("ninebus.json"));
  const auto modes = eigen_modes(linearize(grid, netmodel::solve_power_flow(grid)));
  REQUIRE(modes.size() == 2);  // three machines, two swing modes
  for (const auto& m : modes) {
    CHECK(m.sigma_per_s < 0.0);
    CHECK(!m.unstable);
    CHECK(m.damping_ratio > 0.0);
  }
}

TEST_CASE("analytic state matrix agrees with central finite differences") {
  const GridModel grid = netmodel::load_grid(fixture("ninebus.json"));
  const OperatingPoint op = netmodel::solve_power_flow(grid);
  const Eigen::MatrixXd a = linearize(grid, op);
  const ReducedNetwork rn(grid, op);
  const auto n = static_cast<Eigen::Index>(grid.generators.size());

  Eigen::VectorXd two_h(n), d(n);
  for (Eigen::Index g = 0; g < n; ++g) {
    const double ratio = grid.generators[g].mva_base / grid.mva_base;
    two_h(g) = 2.0 * grid.generators[g].h_s * ratio;
    d(g) = grid.generators[g].d_pu * ratio;
  }
  const Eigen::VectorXd pm = rn.electrical_power(rn.initial_angles());

  // rhs of the swing system as a plain function of the stacked state
  auto f = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd delta = x.head(n);
    const Eigen::VectorXd omega = x.tail(n);
    Eigen::VectorXd out(2 * n);
    out.head(n) = grid.omega_s() * omega;
    out.tail(n) =
        (pm - rn.electrical_power(delta) - d.cwiseProduct(omega)).cwiseQuotient(two_h);
    return out;
  };

  Eigen::VectorXd x0(2 * n);
  x0.head(n) = rn.initial_angles();
  x0.tail(n).setZero();
  const double h = 1e-6;
  Eigen::MatrixXd fd(2 * n, 2 * n);
  for (Eigen::Index c = 0; c < 2 * n; ++c) {
    Eigen::VectorXd up = x0, down = x0;
    up(c) += h;
    down(c) -= h;
    fd.col(c) = (f(up) - f(down)) / (2.0 * h);
  }
  CHECK((a - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("eigen mode extraction reads off frequency, damping and stability") {
  const auto pure = eigen_modes(spiral_block(0.0, 2.0 * M_PI));
  REQUIRE(pure.size() == 1);
  CHECK(pure[0].frequency_hz == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pure[0].damping_ratio == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(!pure[0].unstable);

  const auto damped = eigen_modes(spiral_block(-0.1, 7.5398));
  REQUIRE(damped.size() == 1);
  CHECK(damped[0].frequency_hz == doctest::Approx(1.2).epsilon(1e-4));
  CHECK(damped[0].damping_ratio == doctest::Approx(0.01326).epsilon(1e-3));
  CHECK(!damped[0].unstable);

  const auto growing = eigen_modes(spiral_block(0.05, 6.660));
  REQUIRE(growing.size() == 1);
  CHECK(growing[0].frequency_hz == doctest::Approx(1.06).epsilon(1e-3));
  CHECK(growing[0].unstable);
  CHECK(growing[0].sigma_per_s == doctest::Approx(0.05));

  // purely real eigenvalues are not modes
  Eigen::MatrixXd real2 = Eigen::MatrixXd::Zero(2, 2);
  real2.diagonal() << -1.0, -2.0;
  CHECK(eigen_modes(real2).empty());
}

TEST_CASE("mode damping ratio and real part stay mutually consistent") {
  const GridModel grid = netmodel::load_grid(fixture("ninebus.json"));
  const auto modes = eigen_modes(linearize(grid, netmodel::solve_power_flow(grid)));
  for (const auto& m : modes) {
    const double sigma = -m.damping_ratio * 2.0 * M_PI * m.frequency_hz /
                         std::sqrt(1.0 - m.damping_ratio * m.damping_ratio);
    CHECK(std::abs(sigma - m.sigma_per_s) <= 1e-9 * std::abs(m.sigma_per_s));
  }
}

TEST_CASE("participation factors respect decoupling and symmetry") {
  // two decoupled oscillators
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  a.topLeftCorner(2, 2) = spiral_block(-0.05, 2.0 * M_PI * 0.7);
  a.bottomRightCorner(2, 2) = spiral_block(-0.02, 2.0 * M_PI * 1.9);
  const Eigen::MatrixXd p = participation(a);
  const Eigen::VectorXcd lam = Eigen::EigenSolver<Eigen::MatrixXd>(a).eigenvalues();
  for (Eigen::Index c = 0; c < 4; ++c) {
    const bool first_block = std::abs(lam(c).imag()) < 2.0 * M_PI * 1.0;
    for (Eigen::Index r = 0; r < 4; ++r) {
      const bool in_block = first_block ? r < 2 : r >= 2;
      if (!in_block) CHECK(p(r, c) < 1e-10);
    }
  }

  // symmetric two-machine swing system: the inter-machine mode weighs both
  // rotor angles equally
  const double ws = 2.0 * M_PI * 60.0, k = 1.0, two_h = 6.0;
  Eigen::MatrixXd sym = Eigen::MatrixXd::Zero(4, 4);
  sym(0, 2) = ws;
  sym(1, 3) = ws;
  sym(2, 0) = -k / two_h;
  sym(2, 1) = k / two_h;
  sym(3, 0) = k / two_h;
  sym(3, 1) = -k / two_h;
  const Eigen::MatrixXd ps = participation(sym);
  const Eigen::VectorXcd ls = Eigen::EigenSolver<Eigen::MatrixXd>(sym).eigenvalues();
  for (Eigen::Index c = 0; c < 4; ++c) {
    if (std::abs(ls(c).imag()) < 1e-9) continue;  // zero modes of the free pair
    CHECK(ps(0, c) == doctest::Approx(ps(1, c)).epsilon(1e-6));
  }
}

TEST_CASE("participation matches a direct left-eigenvector recomputation") {
  const GridModel grid = netmodel::load_grid(fixture("ninebus.json"));
  const Eigen::MatrixXd a = linearize(grid, netmodel::solve_power_flow(grid));
  const Eigen::MatrixXd p = participation(a);

  Eigen::EigenSolver<Eigen::MatrixXd> right(a);
  Eigen::EigenSolver<Eigen::MatrixXd> left(a.transpose());
  const auto n = a.rows();
  Eigen::MatrixXd brute(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    // match the left eigenvector by eigenvalue
    Eigen::Index match = 0;
    double best = std::abs(left.eigenvalues()(0) - right.eigenvalues()(c));
    for (Eigen::Index j = 1; j < n; ++j) {
      const double dist = std::abs(left.eigenvalues()(j) - right.eigenvalues()(c));
      if (dist < best) {
        best = dist;
        match = j;
      }
    }
    const Eigen::VectorXcd r = right.eigenvectors().col(c);
    const Eigen::VectorXcd l = left.eigenvectors().col(match);
    const std::complex<double> scale = l.transpose() * r;
    for (Eigen::Index k = 0; k < n; ++k)
      brute(k, c) = std::abs(l(k) * r(k) / scale);
    brute.col(c) /= brute.col(c).maxCoeff();
  }
  CHECK((p - brute).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("exponential fitting recovers an exact sinusoid") {
  const auto y = damped_cosine(1.0, 0.0, 1.0, 0.0, 0.01, 1000);
  const auto modes = prony_fit(y, 0.01, 8);
  REQUIRE(!modes.empty());
  CHECK(modes[0].frequency_hz == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(std::abs(modes[0].damping_ratio) < 1e-3);
  CHECK(modes[0].amplitude == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("exponential fitting separates two damped modes") {
  const auto y = add(damped_cosine(1.0, -0.1, 1.2, 0.0, 0.01, 1000),
                     damped_cosine(0.5, -0.05, 0.5, 0.0, 0.01, 1000));
  const auto modes = prony_fit(y, 0.01, 8);
  REQUIRE(modes.size() >= 2);

  const ModeEstimate& fast = nearest_mode(modes, 1.2);
  CHECK(fast.frequency_hz == doctest::Approx(1.2).epsilon(0.01));
  CHECK(fast.sigma_per_s == doctest::Approx(-0.1).epsilon(0.05));

  const ModeEstimate& slow = nearest_mode(modes, 0.5);
  CHECK(slow.frequency_hz == doctest::Approx(0.5).epsilon(0.01));
  CHECK(slow.sigma_per_s == doctest::Approx(-0.05).epsilon(0.05));
}

TEST_CASE("mode frequencies survive 20 dB of measurement noise") {
  const auto clean = add(damped_cosine(1.0, -0.1, 1.2, 0.0, 0.01, 1000),
                         damped_cosine(0.5, -0.05, 0.5, 0.0, 0.01, 1000));
  const double noise_std = signal_rms(clean) / std::sqrt(100.0);  // 20 dB SNR
  std::vector<double> err12, err05;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<double> y = clean;
    for (double& v : y) v += rng.normal(0.0, noise_std);
    const auto modes = prony_fit(y, 0.01, 16);
    err12.push_back(std::abs(nearest_mode(modes, 1.2).frequency_hz - 1.2) / 1.2);
    err05.push_back(std::abs(nearest_mode(modes, 0.5).frequency_hz - 0.5) / 0.5);
  }
  std::sort(err12.begin(), err12.end());
  std::sort(err05.begin(), err05.end());
  CHECK(0.5 * (err12[4] + err12[5]) < 0.02);
  CHECK(0.5 * (err05[4] + err05[5]) < 0.02);
}

TEST_CASE("fitting problems report their conditioning and reject bad input") {
  const auto y = damped_cosine(1.0, -0.02, 0.8, 0.3, 0.01, 500);
  double cond = 0.0;
  const auto modes = prony_fit(y, 0.01, 6, &cond);
  CHECK(!modes.empty());
  CHECK(cond >= 1.0);
  CHECK(std::isfinite(cond));

  CHECK_THROWS_AS(prony_fit({1.0, 2.0, 3.0}, 0.01, 8), ConfigError);
  CHECK_THROWS_AS(prony_fit(y, -0.01, 8), ConfigError);
}

TEST_CASE("ringdown fit frequencies agree with the eigenanalysis") {
  const GridModel grid = netmodel::load_grid(fixture("ninebus.json"));
  const auto eig = eigen_modes(linearize(grid, netmodel::solve_power_flow(grid)));
  REQUIRE(eig.size() == 2);

  dynsim::SimOptions opts;
  opts.dt_s = 0.01;
  opts.horizon_s = 20.0;
  opts.initial_angle_offset_rad = {0.01, -0.01, 0.02};
  const dynsim::SimResult res = dynsim::simulate(grid, {}, opts);
  REQUIRE(!res.aborted);

  std::vector<double> y;
  for (double f : res.gen_frequency_series(0)) y.push_back(f - grid.f_nominal_hz);
  const auto fitted = prony_fit(y, opts.dt_s, 10);
  for (const auto& mode : eig) {
    const ModeEstimate& match = nearest_mode(fitted, mode.frequency_hz);
    CHECK(match.frequency_hz == doctest::Approx(mode.frequency_hz).epsilon(0.01));
  }
}

TEST_CASE("amplitude spectrum pins sinusoids, constants and square waves") {
  // unit sinusoid on an exact bin
  std::vector<double> sine;
  for (int k = 0; k < 1000; ++k) sine.push_back(std::sin(2.0 * M_PI * 1.0 * 0.01 * k));
  const Spectrum rect = fft_spectrum(sine, 0.01, Window::kRectangular);
  std::size_t peak = 1;
  for (std::size_t k = 1; k < rect.amplitude.size(); ++k)
    if (rect.amplitude[k] > rect.amplitude[peak]) peak = k;
  CHECK(rect.freq_hz[peak] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rect.amplitude[peak] == doctest::Approx(1.0).epsilon(0.01));
  CHECK(rect.resolution_hz == doctest::Approx(0.1).epsilon(1e-12));

  const Spectrum hann = fft_spectrum(sine, 0.01, Window::kHann);
  CHECK(hann.amplitude[peak] == doctest::Approx(1.0).epsilon(0.01));

  // constant signal: all energy at 0 Hz
  const Spectrum flat = fft_spectrum(std::vector<double>(256, 3.5), 0.01,
                                     Window::kRectangular);
  CHECK(flat.amplitude[0] == doctest::Approx(3.5).epsilon(1e-9));
  for (std::size_t k = 1; k < flat.amplitude.size(); ++k)
    CHECK(flat.amplitude[k] < 1e-9);

  // duty-0.75 unit square wave: harmonics follow 2|sin(pi k r)|/(pi k)
  std::vector<double> square(1000);
  for (int k = 0; k < 1000; ++k) square[k] = (k % 100) < 75 ? 1.0 : 0.0;
  const Spectrum sq = fft_spectrum(square, 0.01, Window::kRectangular);
  for (int k : {1, 2, 3, 5}) {
    const double expected = 2.0 * std::abs(std::sin(M_PI * k * 0.75)) / (M_PI * k);
    CHECK(sq.amplitude[static_cast<std::size_t>(10 * k)] ==
          doctest::Approx(expected).epsilon(0.02));
  }
}

TEST_CASE("rectangular-window spectrum conserves signal power") {
  Rng rng(77);
  std::vector<double> y;
  for (int k = 0; k < 1000; ++k) y.push_back(rng.normal(1.0, 2.0));
  const Spectrum s = fft_spectrum(y, 0.02, Window::kRectangular);
  double power = s.amplitude[0] * s.amplitude[0];
  for (std::size_t k = 1; k + 1 < s.amplitude.size(); ++k)
    power += 0.5 * s.amplitude[k] * s.amplitude[k];
  power += s.amplitude.back() * s.amplitude.back();  // Nyquist bin, undoubled
  const double rms2 = signal_rms(y) * signal_rms(y);
  CHECK(power == doctest::Approx(rms2).epsilon(1e-6));
}

TEST_CASE("mode energy closed form matches quadrature and is continuous") {
  CHECK(pseudo_energy(0.0, -0.3, 10.0) == 0.0);
  CHECK(pseudo_energy(1.0, 0.0, 10.0) == doctest::Approx(10.0).epsilon(1e-12));

  const double closed = pseudo_energy(2.0, -0.1, 10.0);
  CHECK(closed == doctest::Approx(17.293).epsilon(1e-4));
  // trapezoid quadrature of the squared envelope
  const int n = 200000;
  double quad = 0.0;
  for (int k = 0; k < n; ++k) {
    const double t0 = 10.0 * k / n, t1 = 10.0 * (k + 1) / n;
    quad += 0.5 * (4.0 * std::exp(-0.2 * t0) + 4.0 * std::exp(-0.2 * t1)) * (t1 - t0);
  }
  CHECK(closed == doctest::Approx(quad).epsilon(1e-3));

  const double at_zero = pseudo_energy(1.5, 0.0, 8.0);
  CHECK(std::abs(pseudo_energy(1.5, 1e-9, 8.0) - at_zero) < 1e-6 * at_zero);
  CHECK(std::abs(pseudo_energy(1.5, -1e-9, 8.0) - at_zero) < 1e-6 * at_zero);

  const auto norm = normalize_energies({2.0, 8.0, 4.0});
  CHECK(norm[1] == doctest::Approx(1.0));
  CHECK(norm[0] == doctest::Approx(0.25));
  CHECK(normalize_energies({}).empty());
}

TEST_CASE("mode shapes flag coherent, anti-phase and grouped signals") {
  const double dt = 0.01;
  const int n = 2000;

  std::map<std::string, std::vector<double>> same;
  same["a"] = damped_cosine(1.0, -0.05, 1.0, 0.0, dt, n);
  same["b"] = same["a"];
  const auto coherent = mode_shape(same, dt, 1.0, 0.15);
  REQUIRE(coherent.size() == 2);
  CHECK(std::abs(coherent.at("a").phase_rad - coherent.at("b").phase_rad) < 1e-6);

  std::map<std::string, std::vector<double>> anti;
  anti["pos"] = damped_cosine(1.0, -0.05, 1.0, 0.0, dt, n);
  anti["neg"] = damped_cosine(1.0, -0.05, 1.0, M_PI, dt, n);
  const auto split = mode_shape(anti, dt, 1.0, 0.15);
  REQUIRE(split.size() == 2);
  const double sep = std::abs(split.at("pos").phase_rad - split.at("neg").phase_rad);
  CHECK(std::min(sep, 2.0 * M_PI - sep) == doctest::Approx(M_PI).epsilon(0.01 / M_PI));
}

TEST_CASE("two noisy coherent groups separate by half a turn") {
  const double dt = 0.01;
  const int n = 2000;
  Rng rng(5150);
  auto noisy = [&](double amp, double phase) {
    auto y = damped_cosine(amp, -0.03, 1.2, phase, dt, n);
    const double ns = 0.05 * signal_rms(y);
    for (double& v : y) v += rng.normal(0.0, ns);
    return y;
  };
  std::map<std::string, std::vector<double>> sig;
  sig["a1"] = noisy(1.0, 0.0);
  sig["a2"] = noisy(0.8, 0.0);
  sig["b1"] = noisy(1.0, M_PI);
  sig["b2"] = noisy(0.9, M_PI);
  const auto shape = mode_shape(sig, dt, 1.2, 0.15, 12);
  REQUIRE(shape.size() == 4);

  auto circ_dist = [](double x, double y) {
    const double d = std::abs(x - y);
    return std::min(d, 2.0 * M_PI - d);
  };
  CHECK(circ_dist(shape.at("a1").phase_rad, shape.at("a2").phase_rad) < 0.2);
  CHECK(circ_dist(shape.at("b1").phase_rad, shape.at("b2").phase_rad) < 0.2);
  CHECK(circ_dist(shape.at("a1").phase_rad, shape.at("b1").phase_rad) ==
        doctest::Approx(M_PI).epsilon(0.2 / M_PI));

  // anchor convention: the largest amplitude sits at phase zero
  double max_amp = 0.0;
  for (const auto& [name, entry] : shape) max_amp = std::max(max_amp, entry.amplitude);
  bool anchor_at_zero = false;
  for (const auto& [name, entry] : shape)
    if (entry.amplitude == max_amp && std::abs(entry.phase_rad) < 1e-9)
      anchor_at_zero = true;
  CHECK(anchor_at_zero);
}

TEST_CASE("signals without the target mode are excluded from the shape") {
  const double dt = 0.01;
  const int n = 2000;
  std::map<std::string, std::vector<double>> sig;
  sig["has"] = damped_cosine(1.0, -0.05, 1.0, 0.0, dt, n);
  sig["lacks"] = damped_cosine(1.0, -0.05, 3.0, 0.0, dt, n);
  std::vector<std::string> excluded;
  const auto shape = mode_shape(sig, dt, 1.0, 0.15, 8, &excluded);
  CHECK(shape.count("has") == 1);
  CHECK(shape.count("lacks") == 0);
  REQUIRE(excluded.size() == 1);
  CHECK(excluded[0] == "lacks");
}
