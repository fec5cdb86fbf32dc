#include "gridosc/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gridosc::netmodel {

using cplx = std::complex<double>;

int GridModel::bus_index(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == bus_id) return static_cast<int>(i);
  return -1;
}

double GridModel::bus_load_mw(int bus_id) const {
  double p = 0.0;
  for (const auto& l : loads)
    if (l.bus == bus_id) p += l.p_mw;
  return p;
}

namespace {

BusType parse_bus_type(const std::string& s) {
  if (s == "slack") return BusType::kSlack;
  if (s == "PV" || s == "pv") return BusType::kPV;
  if (s == "PQ" || s == "pq") return BusType::kPQ;
  throw ConfigError("grid: unknown bus type '" + s + "'");
}

void validate_grid(const GridModel& g) {
  if (g.buses.empty()) throw ConfigError("grid: no buses");
  if (!(g.mva_base > 0.0) || !(g.f_nominal_hz > 0.0))
    throw ConfigError("grid: mva_base and f_nominal_hz must be positive");

  std::set<int> ids;
  int n_slack = 0;
  for (const auto& b : g.buses) {
    if (!ids.insert(b.id).second)
      throw ConfigError("grid: duplicate bus id " + std::to_string(b.id));
    if (b.type == BusType::kSlack) ++n_slack;
  }
  if (n_slack != 1)
    throw ConfigError("grid: exactly one slack bus required, found " +
                      std::to_string(n_slack));

  for (const auto& br : g.branches) {
    if (!ids.count(br.from) || !ids.count(br.to))
      throw ConfigError("grid: branch references unknown bus");
    if (br.r_pu == 0.0 && br.x_pu == 0.0)
      throw ConfigError("grid: zero series impedance branch " +
                        std::to_string(br.from) + "-" + std::to_string(br.to));
  }
  std::set<int> gen_buses;
  for (const auto& gen : g.generators) {
    if (!ids.count(gen.bus))
      throw ConfigError("grid: generator references unknown bus " +
                        std::to_string(gen.bus));
    if (!gen_buses.insert(gen.bus).second)
      throw ConfigError("grid: multiple generators at bus " + std::to_string(gen.bus));
    if (!(gen.h_s > 0.0)) throw ConfigError("grid: generator H must be positive");
    if (!(gen.xdp_pu > 0.0)) throw ConfigError("grid: generator x'd must be positive");
    if (!(gen.mva_base > 0.0)) throw ConfigError("grid: generator MVA base must be positive");
  }
  for (const auto& l : g.loads)
    if (!ids.count(l.bus))
      throw ConfigError("grid: load references unknown bus " + std::to_string(l.bus));

  // Connectivity over branches.
  std::map<int, std::vector<int>> adj;
  for (const auto& br : g.branches) {
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::set<int> seen;
  std::queue<int> frontier;
  frontier.push(g.buses.front().id);
  seen.insert(g.buses.front().id);
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    for (int v : adj[u])
      if (seen.insert(v).second) frontier.push(v);
  }
  if (seen.size() != g.buses.size())
    throw ConfigError("grid: network is not connected");
}

}  // namespace

GridModel parse_grid(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid: JSON parse failure: ") + e.what());
  }
  GridModel g;
  try {
    g.mva_base = j.at("mva_base").get<double>();
    g.f_nominal_hz = j.at("f_nominal_hz").get<double>();
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.type = parse_bus_type(jb.at("type").get<std::string>());
      b.base_kv = jb.value("base_kv", 0.0);
      b.shunt_g_pu = jb.value("shunt_g", 0.0);
      b.shunt_b_pu = jb.value("shunt_b", 0.0);
      b.vm_setpoint_pu = jb.value("vm", 1.0);
      g.buses.push_back(b);
    }
    for (const auto& jb : j.at("branches")) {
      Branch br;
      br.from = jb.at("from").get<int>();
      br.to = jb.at("to").get<int>();
      br.r_pu = jb.value("r", 0.0);
      br.x_pu = jb.at("x").get<double>();
      br.charging_b_pu = jb.value("b", 0.0);
      br.tap = jb.value("tap", 1.0);
      g.branches.push_back(br);
    }
    for (const auto& jg : j.value("generators", nlohmann::json::array())) {
      Generator gen;
      gen.bus = jg.at("bus").get<int>();
      gen.h_s = jg.at("h").get<double>();
      gen.d_pu = jg.value("d", 2.0);
      gen.xdp_pu = jg.at("xdp").get<double>();
      gen.mva_base = jg.value("mva", g.mva_base);
      gen.p_set_pu = jg.value("p_set", 0.0);
      gen.v_set_pu = jg.value("v_set", 1.0);
      g.generators.push_back(gen);
    }
    for (const auto& jl : j.value("loads", nlohmann::json::array())) {
      Load l;
      l.bus = jl.at("bus").get<int>();
      l.p_mw = jl.value("p_mw", 0.0);
      l.q_mvar = jl.value("q_mvar", 0.0);
      g.loads.push_back(l);
    }
    for (const auto& js : j.value("fluct_slots", nlohmann::json::array())) {
      FluctSlot s;
      s.bus = js.at("bus").get<int>();
      s.nominal_mw = js.at("nominal_mw").get<double>();
      if (js.contains("mix")) s.mix = workload::mix_from_json(js.at("mix"));
      g.fluct_slots.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid: schema violation: ") + e.what());
  }
  validate_grid(g);
  return g;
}

GridModel load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_grid(buf.str());
}

Eigen::MatrixXcd build_ybus(const GridModel& grid) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : grid.branches) {
    if (br.r_pu == 0.0 && br.x_pu == 0.0)
      throw ConfigError("build_ybus: zero series impedance branch");
    const cplx ys = 1.0 / cplx(br.r_pu, br.x_pu);
    const cplx ysh(0.0, br.charging_b_pu / 2.0);
    const auto i = static_cast<Eigen::Index>(grid.bus_index(br.from));
    const auto k = static_cast<Eigen::Index>(grid.bus_index(br.to));
    const double t = br.tap;
    y(i, i) += (ys + ysh) / (t * t);
    y(k, k) += ys + ysh;
    y(i, k) -= ys / t;
    y(k, i) -= ys / t;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    y(i, i) += cplx(grid.buses[i].shunt_g_pu, grid.buses[i].shunt_b_pu);
  return y;
}

namespace {

/// Scheduled net injection per bus (generation minus constant load minus
/// fluctuating slot nominal), system base pu.
Eigen::VectorXcd scheduled_injection(const GridModel& grid) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(n);
  for (const auto& gen : grid.generators)
    s(grid.bus_index(gen.bus)) += cplx(gen.p_set_pu, 0.0);
  for (const auto& l : grid.loads)
    s(grid.bus_index(l.bus)) -= cplx(l.p_mw, l.q_mvar) / grid.mva_base;
  for (const auto& slot : grid.fluct_slots)
    s(grid.bus_index(slot.bus)) -= cplx(slot.nominal_mw, 0.0) / grid.mva_base;
  return s;
}

Eigen::VectorXcd bus_voltages(const OperatingPoint& op) {
  Eigen::VectorXcd v(op.vm_pu.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = std::polar(op.vm_pu(i), op.va_rad(i));
  return v;
}

}  // namespace

OperatingPoint solve_power_flow(const GridModel& grid, double tol, int max_iter) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  const Eigen::MatrixXcd y = build_ybus(grid);
  const Eigen::VectorXcd s_sched = scheduled_injection(grid);

  // Flat start with setpoint magnitudes at slack/PV buses.
  Eigen::VectorXd vm = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd va = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Bus& b = grid.buses[i];
    if (b.type == BusType::kPQ) continue;
    double setpoint = b.vm_setpoint_pu;
    for (const auto& gen : grid.generators)
      if (grid.bus_index(gen.bus) == i) setpoint = gen.v_set_pu;
    vm(i) = setpoint;
  }

  std::vector<Eigen::Index> p_rows, q_rows;  // bus indices with P / Q equations
  for (Eigen::Index i = 0; i < n; ++i) {
    if (grid.buses[i].type != BusType::kSlack) p_rows.push_back(i);
    if (grid.buses[i].type == BusType::kPQ) q_rows.push_back(i);
  }
  const auto np = static_cast<Eigen::Index>(p_rows.size());
  const auto nq = static_cast<Eigen::Index>(q_rows.size());
  const Eigen::Index n_unknown = np + nq;

  auto calc_injection = [&](const Eigen::VectorXd& vmag, const Eigen::VectorXd& vang) {
    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vmag(i), vang(i));
    const Eigen::VectorXcd i_inj = y * v;
    return Eigen::VectorXcd(v.cwiseProduct(i_inj.conjugate()));
  };

  OperatingPoint op;
  double mismatch = 0.0;
  int iter = 0;
  for (; iter <= max_iter; ++iter) {
    const Eigen::VectorXcd s_calc = calc_injection(vm, va);
    Eigen::VectorXd f(n_unknown);
    for (Eigen::Index a = 0; a < np; ++a)
      f(a) = s_sched(p_rows[a]).real() - s_calc(p_rows[a]).real();
    for (Eigen::Index a = 0; a < nq; ++a)
      f(np + a) = s_sched(q_rows[a]).imag() - s_calc(q_rows[a]).imag();
    mismatch = n_unknown > 0 ? f.lpNorm<Eigen::Infinity>() : 0.0;
    if (mismatch < tol) break;
    if (iter == max_iter)
      throw SolveError("power flow did not converge; final mismatch " +
                       std::to_string(mismatch));

    // Polar Newton-Raphson Jacobian.
    Eigen::MatrixXd jac(n_unknown, n_unknown);
    auto dS = [&](Eigen::Index i, Eigen::Index k, bool wrt_angle) {
      // dS_i/dtheta_k or dS_i/dVm_k at the current iterate.
      const cplx vi = std::polar(vm(i), va(i));
      const cplx vk = std::polar(vm(k), va(k));
      cplx total(0.0, 0.0);
      if (wrt_angle) {
        if (i == k) {
          cplx sum(0.0, 0.0);
          for (Eigen::Index m = 0; m < n; ++m)
            sum += y(i, m) * std::polar(vm(m), va(m));
          // d/dtheta_i [vi * conj(Y v)] = j vi conj(sum) - j vi conj(y_ii vi)
          total = cplx(0, 1) * vi * std::conj(sum) -
                  cplx(0, 1) * vi * std::conj(y(i, i) * vi);
        } else {
          total = vi * std::conj(y(i, k) * vk * cplx(0, 1));
        }
      } else {
        if (i == k) {
          cplx sum(0.0, 0.0);
          for (Eigen::Index m = 0; m < n; ++m)
            sum += y(i, m) * std::polar(vm(m), va(m));
          total = (vi / vm(i)) * std::conj(sum) +
                  vi * std::conj(y(i, i) * vi / vm(i));
        } else {
          total = vi * std::conj(y(i, k) * vk / vm(k));
        }
      }
      return total;
    };
    for (Eigen::Index a = 0; a < np + nq; ++a) {
      const bool is_p = a < np;
      const Eigen::Index i = is_p ? p_rows[a] : q_rows[a - np];
      for (Eigen::Index b = 0; b < np + nq; ++b) {
        const bool wrt_angle = b < np;
        const Eigen::Index k = wrt_angle ? p_rows[b] : q_rows[b - np];
        const cplx d = dS(i, k, wrt_angle);
        jac(a, b) = is_p ? d.real() : d.imag();
      }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const Eigen::VectorXd dx = lu.solve(f);
    if (!dx.allFinite()) throw SolveError("power flow: singular Jacobian");
    for (Eigen::Index a = 0; a < np; ++a) va(p_rows[a]) += dx(a);
    for (Eigen::Index a = 0; a < nq; ++a) vm(q_rows[a]) += dx(np + a);
  }

  op.vm_pu = vm;
  op.va_rad = va;
  op.mismatch_norm = mismatch;
  op.iterations = iter;
  op.injection_pu = calc_injection(vm, va);

  // Internal EMF behind x'd from terminal conditions.
  const auto ng = static_cast<Eigen::Index>(grid.generators.size());
  op.emf_pu.resize(ng);
  op.delta_rad.resize(ng);
  for (Eigen::Index gi = 0; gi < ng; ++gi) {
    const Generator& gen = grid.generators[gi];
    const auto bi = static_cast<Eigen::Index>(grid.bus_index(gen.bus));
    // Machine terminal power = net injection plus local constant loads/slots.
    cplx s_term = op.injection_pu(bi);
    for (const auto& l : grid.loads)
      if (l.bus == gen.bus) s_term += cplx(l.p_mw, l.q_mvar) / grid.mva_base;
    for (const auto& slot : grid.fluct_slots)
      if (slot.bus == gen.bus) s_term += cplx(slot.nominal_mw, 0.0) / grid.mva_base;
    const cplx v = std::polar(vm(bi), va(bi));
    const cplx i_term = std::conj(s_term / v);
    const double xdp_sys = gen.xdp_pu * grid.mva_base / gen.mva_base;
    const cplx e = v + cplx(0.0, xdp_sys) * i_term;
    op.emf_pu(gi) = std::abs(e);
    op.delta_rad(gi) = std::arg(e);
  }
  return op;
}

double power_flow_mismatch(const GridModel& grid, const OperatingPoint& op) {
  const Eigen::MatrixXcd y = build_ybus(grid);
  const Eigen::VectorXcd v = bus_voltages(op);
  const Eigen::VectorXcd s_calc = v.cwiseProduct((y * v).conjugate());
  const Eigen::VectorXcd s_sched = scheduled_injection(grid);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const Bus& b = grid.buses[i];
    if (b.type == BusType::kSlack) continue;
    worst = std::max(worst, std::abs(s_sched(i).real() - s_calc(i).real()));
    if (b.type == BusType::kPQ)
      worst = std::max(worst, std::abs(s_sched(i).imag() - s_calc(i).imag()));
  }
  return worst;
}

GridModel attach_datacenter(const GridModel& grid, const DatacenterSpec& dc) {
  if (std::abs(dc.steady_fraction + dc.fluct_fraction - 1.0) > 1e-12)
    throw ConfigError("attach_datacenter: fractions must sum to 1");
  if (dc.capacity_mw < 0.0) throw ConfigError("attach_datacenter: negative capacity");
  if (grid.bus_index(dc.bus) < 0)
    throw ConfigError("attach_datacenter: bus " + std::to_string(dc.bus) + " not found");

  GridModel out = grid;
  if (dc.capacity_mw == 0.0) {
    FluctSlot slot{dc.bus, 0.0, dc.mix};
    out.fluct_slots.push_back(slot);
    return out;
  }
  const double existing = grid.bus_load_mw(dc.bus);
  if (existing + 1e-9 < dc.capacity_mw)
    throw ConfigError("attach_datacenter: capacity " + std::to_string(dc.capacity_mw) +
                      " MW exceeds bus load " + std::to_string(existing) + " MW");

  // Reduce constant load by capacity, restore the steady share; the
  // fluctuating share becomes a constant-power slot so that the nominal
  // total reproduces the original bus load.
  double to_remove = dc.capacity_mw * (1.0 - dc.steady_fraction);
  for (auto& l : out.loads) {
    if (l.bus != dc.bus || to_remove <= 0.0) continue;
    const double cut = std::min(l.p_mw, to_remove);
    l.p_mw -= cut;
    to_remove -= cut;
  }
  FluctSlot slot{dc.bus, dc.fluct_fraction * dc.capacity_mw, dc.mix};
  out.fluct_slots.push_back(slot);
  return out;
}

GridModel scale_inertia(const GridModel& grid, double factor) {
  if (!(factor > 0.0)) throw ConfigError("scale_inertia: factor must be positive");
  GridModel out = grid;
  for (auto& gen : out.generators) gen.h_s *= factor;
  return out;
}

double system_inertia(const GridModel& grid) {
  if (grid.generators.empty()) throw ConfigError("system_inertia: no generators");
  double num = 0.0, den = 0.0;
  for (const auto& gen : grid.generators) {
    num += gen.h_s * gen.mva_base;
    den += gen.mva_base;
  }
  return num / den;
}

}  // namespace gridosc::netmodel
