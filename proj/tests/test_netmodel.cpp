#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <string>

#include "gridosc/modal.hpp"
#include "gridosc/netmodel.hpp"

using namespace gridosc;
using namespace gridosc::netmodel;
using cplx = std::complex<double>;

namespace {

std::string fixture(const char* name) {
  return std::string(GRIDOSC_FIXTURE_DIR) + "/" + name;
}

// Minimal two-bus document used by several assembly tests.
std::string two_bus_json(double r, double x, double shunt_b1 = 0.0,
                         const char* bus2_type = "pq", double p_load_mw = 0.0) {
  nlohmann::json j;
  j["mva_base"] = 100.0;
  j["f_nominal_hz"] = 60.0;
  j["buses"] = {{{"id", 1}, {"type", "slack"}, {"base_kv", 230.0}, {"shunt_b", shunt_b1}},
                {{"id", 2}, {"type", bus2_type}, {"base_kv", 230.0}, {"vm", 1.0}}};
  j["branches"] = {{{"from", 1}, {"to", 2}, {"r", r}, {"x", x}}};
  j["generators"] = nlohmann::json::array();
  j["loads"] = nlohmann::json::array();
  if (p_load_mw != 0.0) j["loads"].push_back({{"bus", 2}, {"p_mw", p_load_mw}});
  return j.dump();
}

}  // namespace

TEST_CASE("bundled nine-bus document loads with the expected element counts") {
  const GridModel grid = load_grid(fixture("ninebus.json"));
  CHECK(grid.buses.size() == 9);
  CHECK(grid.generators.size() == 3);
  CHECK(grid.branches.size() == 9);
  CHECK(grid.f_nominal_hz == 60.0);
}

TEST_CASE("grid validation rejects structural errors") {
  const GridModel base = load_grid(fixture("ninebus.json"));

  nlohmann::json j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  j["generators"][0]["bus"] = 99;  // unknown bus reference
  CHECK_THROWS_AS(parse_grid(j.dump()), ConfigError);

  j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  j["buses"][1]["type"] = "slack";  // second slack
  CHECK_THROWS_AS(parse_grid(j.dump()), ConfigError);

  j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  j["generators"][0]["h"] = -1.0;
  CHECK_THROWS_AS(parse_grid(j.dump()), ConfigError);

  j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  j["branches"] = {j["branches"][0]};  // disconnects the network
  CHECK_THROWS_AS(parse_grid(j.dump()), ConfigError);

  j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  j["loads"][0]["bus"] = 77;
  CHECK_THROWS_AS(parse_grid(j.dump()), ConfigError);
}

TEST_CASE("admittance assembly of a single series branch") {
  const GridModel grid = parse_grid(two_bus_json(0.0, 0.1));
  const Eigen::MatrixXcd y = build_ybus(grid);
  REQUIRE(y.rows() == 2);
  CHECK(std::abs(y(0, 0) - cplx(0.0, -10.0)) < 1e-12);
  CHECK(std::abs(y(1, 1) - cplx(0.0, -10.0)) < 1e-12);
  CHECK(std::abs(y(0, 1) - cplx(0.0, 10.0)) < 1e-12);
  CHECK(std::abs(y(1, 0) - cplx(0.0, 10.0)) < 1e-12);
}

TEST_CASE("bus shunt stamps only its own diagonal entry") {
  const Eigen::MatrixXcd y0 = build_ybus(parse_grid(two_bus_json(0.0, 0.1)));
  const Eigen::MatrixXcd y1 = build_ybus(parse_grid(two_bus_json(0.0, 0.1, 0.05)));
  CHECK(std::abs(y1(0, 0) - y0(0, 0) - cplx(0.0, 0.05)) < 1e-12);
  CHECK(std::abs(y1(0, 1) - y0(0, 1)) < 1e-15);
  CHECK(std::abs(y1(1, 0) - y0(1, 0)) < 1e-15);
  CHECK(std::abs(y1(1, 1) - y0(1, 1)) < 1e-15);
}

TEST_CASE("three-bus triangle matches a hand-assembled admittance matrix") {
  nlohmann::json j;
  j["mva_base"] = 100.0;
  j["f_nominal_hz"] = 60.0;
  j["buses"] = {{{"id", 1}, {"type", "slack"}, {"base_kv", 230.0}},
                {{"id", 2}, {"type", "pq"}, {"base_kv", 230.0}},
                {{"id", 3}, {"type", "pq"}, {"base_kv", 230.0}}};
  j["branches"] = {{{"from", 1}, {"to", 2}, {"r", 0.01}, {"x", 0.1}, {"b", 0.02}},
                   {{"from", 2}, {"to", 3}, {"r", 0.02}, {"x", 0.25}},
                   {{"from", 1}, {"to", 3}, {"r", 0.0}, {"x", 0.2}}};
  j["generators"] = nlohmann::json::array();
  j["loads"] = nlohmann::json::array();
  const Eigen::MatrixXcd y = build_ybus(parse_grid(j.dump()));

  const cplx y12 = 1.0 / cplx(0.01, 0.1);
  const cplx y23 = 1.0 / cplx(0.02, 0.25);
  const cplx y13 = 1.0 / cplx(0.0, 0.2);
  const cplx half_b12 = cplx(0.0, 0.01);
  Eigen::MatrixXcd expect(3, 3);
  expect << y12 + y13 + half_b12, -y12, -y13,
            -y12, y12 + y23 + half_b12, -y23,
            -y13, -y23, y13 + y23;
  CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-12);
  // tap-free assembly is symmetric
  CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("removing a branch removes exactly its stamp") {
  nlohmann::json j = nlohmann::json::parse(std::ifstream(fixture("ninebus.json")));
  const Eigen::MatrixXcd y_full = build_ybus(parse_grid(j.dump()));

  // Stamp of branch 0 recomputed directly from its parameters.
  const auto& b = j["branches"][5];  // a loop branch, so removal keeps connectivity
  GridModel grid = parse_grid(j.dump());
  const auto fi = static_cast<Eigen::Index>(grid.bus_index(b["from"].get<int>()));
  const auto ti = static_cast<Eigen::Index>(grid.bus_index(b["to"].get<int>()));
  const cplx ys = 1.0 / cplx(b.value("r", 0.0), b["x"].get<double>());
  const cplx half_b = cplx(0.0, 0.5 * b.value("b", 0.0));

  j["branches"].erase(5);
  const Eigen::MatrixXcd y_red = build_ybus(parse_grid(j.dump()));

  Eigen::MatrixXcd diff = y_full - y_red;
  CHECK(std::abs(diff(fi, fi) - (ys + half_b)) < 1e-12);
  CHECK(std::abs(diff(ti, ti) - (ys + half_b)) < 1e-12);
  CHECK(std::abs(diff(fi, ti) + ys) < 1e-12);
  diff(fi, fi) = diff(ti, ti) = diff(fi, ti) = diff(ti, fi) = 0.0;
  CHECK(diff.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("power flow of an unloaded network is flat and immediate") {
  const GridModel grid = parse_grid(two_bus_json(0.0, 0.1));
  const OperatingPoint op = solve_power_flow(grid);
  CHECK(op.iterations <= 1);
  CHECK((op.vm_pu.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(op.va_rad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-bus lossless angle matches a bisection oracle") {
  // Bus 2 held at 1.0 pu (PV) drawing 1.0 pu of real power over x = 0.1.
  const GridModel grid = parse_grid(two_bus_json(0.0, 0.1, 0.0, "pv", 100.0));
  const OperatingPoint op = solve_power_flow(grid);
  REQUIRE(op.mismatch_norm < 1e-8);

  // Bisection on P = (V1*V2/X) sin(d) = 1.0 for the angle drop d.
  double lo = 0.0, hi = M_PI / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (std::sin(mid) / 0.1 < 1.0)
      lo = mid;
    else
      hi = mid;
  }
  const double d_oracle = 0.5 * (lo + hi);
  CHECK(-op.va_rad(1) == doctest::Approx(d_oracle).epsilon(1e-8));
}

TEST_CASE("nine-bus power flow converges fast and survives re-evaluation") {
  const GridModel grid = load_grid(fixture("ninebus.json"));
  const OperatingPoint op = solve_power_flow(grid);
  CHECK(op.iterations <= 10);
  CHECK(op.mismatch_norm < 1e-8);
  CHECK(power_flow_mismatch(grid, op) < 1e-8);
  // all voltages in a sane band for the stock case
  CHECK(op.vm_pu.minCoeff() > 0.9);
  CHECK(op.vm_pu.maxCoeff() < 1.1);
}

TEST_CASE("datacenter attachment splits load into steady and fluctuating parts") {
  nlohmann::json j;
  j["mva_base"] = 100.0;
  j["f_nominal_hz"] = 60.0;
  j["buses"] = {{{"id", 1}, {"type", "slack"}, {"base_kv", 230.0}},
                {{"id", 2}, {"type", "pq"}, {"base_kv", 230.0}}};
  j["branches"] = {{{"from", 1}, {"to", 2}, {"x", 0.1}}};
  j["generators"] = nlohmann::json::array();
  j["loads"] = {{{"bus", 2}, {"p_mw", 1500.0}}};
  const GridModel grid = parse_grid(j.dump());

  DatacenterSpec dc;
  dc.bus = 2;
  dc.capacity_mw = 1000.0;
  const GridModel out = attach_datacenter(grid, dc);
  CHECK(out.bus_load_mw(2) == doctest::Approx(1300.0));
  REQUIRE(out.fluct_slots.size() == 1);
  CHECK(out.fluct_slots[0].bus == 2);
  CHECK(out.fluct_slots[0].nominal_mw == doctest::Approx(200.0));
  CHECK(out.bus_load_mw(2) + out.fluct_slots[0].nominal_mw == doctest::Approx(1500.0));

  DatacenterSpec zero = dc;
  zero.capacity_mw = 0.0;
  const GridModel same = attach_datacenter(grid, zero);
  CHECK(same.bus_load_mw(2) == doctest::Approx(1500.0));

  DatacenterSpec too_big = dc;
  too_big.capacity_mw = 2000.0;
  CHECK_THROWS_AS(attach_datacenter(grid, too_big), ConfigError);

  DatacenterSpec bad_split = dc;
  bad_split.steady_fraction = 0.9;  // fractions no longer sum to one
  CHECK_THROWS_AS(attach_datacenter(grid, bad_split), ConfigError);
}

TEST_CASE("attachment at nominal leaves the power-flow solution unchanged") {
  const GridModel grid = load_grid(fixture("ninebus.json"));
  const OperatingPoint before = solve_power_flow(grid);

  DatacenterSpec dc;
  dc.bus = 5;
  dc.capacity_mw = 60.0;
  const GridModel attached = attach_datacenter(grid, dc);
  const OperatingPoint after = solve_power_flow(attached);

  CHECK((before.vm_pu - after.vm_pu).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((before.va_rad - after.va_rad).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((before.emf_pu - after.emf_pu).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("inertia scaling rescales H and nothing else") {
  const GridModel grid = load_grid(fixture("ninebus.json"));
  const GridModel same = scale_inertia(grid, 1.0);
  for (std::size_t g = 0; g < grid.generators.size(); ++g) {
    CHECK(same.generators[g].h_s == grid.generators[g].h_s);
    CHECK(same.generators[g].xdp_pu == grid.generators[g].xdp_pu);
  }

  const GridModel low = scale_inertia(grid, 0.4);
  for (std::size_t g = 0; g < grid.generators.size(); ++g)
    CHECK(low.generators[g].h_s == doctest::Approx(0.4 * grid.generators[g].h_s));

  CHECK_THROWS_AS(scale_inertia(grid, 0.0), ConfigError);
  CHECK_THROWS_AS(scale_inertia(grid, -1.0), ConfigError);
}

TEST_CASE("system inertia 2.7 scaled by 0.4 lands at 1.08") {
  GridModel grid = load_grid(fixture("smib.json"));
  grid.generators[0].h_s = 2.7;
  CHECK(system_inertia(grid) == doctest::Approx(2.7));
  const GridModel low = scale_inertia(grid, 0.4);
  CHECK(system_inertia(low) == doctest::Approx(1.08));
  CHECK(std::abs(system_inertia(low) - 1.09) < 0.02);  // reported rounding
}

TEST_CASE("quartering inertia doubles the undamped eigenfrequency") {
  GridModel grid = load_grid(fixture("smib.json"));
  grid.generators[0].d_pu = 0.0;
  const OperatingPoint op = solve_power_flow(grid);
  const auto base_modes = modal::eigen_modes(modal::linearize(grid, op));
  const GridModel low = scale_inertia(grid, 0.25);
  const auto low_modes = modal::eigen_modes(modal::linearize(low, solve_power_flow(low)));
  REQUIRE(base_modes.size() == 1);
  REQUIRE(low_modes.size() == 1);
  CHECK(low_modes[0].frequency_hz ==
        doctest::Approx(2.0 * base_modes[0].frequency_hz).epsilon(1e-9));
}

TEST_CASE("system inertia is the MVA-weighted mean of machine constants") {
  GridModel grid = load_grid(fixture("smib.json"));
  CHECK(system_inertia(grid) == doctest::Approx(3.0));

  // two machines H = {2, 4} at equal MVA average to 3
  nlohmann::json j;
  j["mva_base"] = 100.0;
  j["f_nominal_hz"] = 60.0;
  j["buses"] = {{{"id", 1}, {"type", "slack"}, {"base_kv", 230.0}, {"vm", 1.0}},
                {{"id", 2}, {"type", "pv"}, {"base_kv", 230.0}}};
  j["branches"] = {{{"from", 1}, {"to", 2}, {"x", 0.2}}};
  j["generators"] = {{{"bus", 1}, {"h", 2.0}, {"xdp", 0.2}, {"mva", 100.0}},
                     {{"bus", 2}, {"h", 4.0}, {"xdp", 0.2}, {"mva", 100.0}, {"v_set", 1.0}}};
  j["loads"] = nlohmann::json::array();
  CHECK(system_inertia(parse_grid(j.dump())) == doctest::Approx(3.0));

  // nine-bus figure computed separately: (23.64 + 6.4 + 3.01)/3 at 100 MVA each
  const GridModel nine = load_grid(fixture("ninebus.json"));
  CHECK(system_inertia(nine) == doctest::Approx((23.64 + 6.4 + 3.01) / 3.0));
}

TEST_CASE("inertia scaling and datacenter attachment commute") {
  const GridModel grid = load_grid(fixture("ninebus.json"));
  DatacenterSpec dc;
  dc.bus = 6;
  dc.capacity_mw = 40.0;
  const GridModel a = scale_inertia(attach_datacenter(grid, dc), 0.5);
  const GridModel b = attach_datacenter(scale_inertia(grid, 0.5), dc);
  REQUIRE(a.fluct_slots.size() == b.fluct_slots.size());
  CHECK(a.fluct_slots[0].nominal_mw == b.fluct_slots[0].nominal_mw);
  for (std::size_t g = 0; g < a.generators.size(); ++g)
    CHECK(a.generators[g].h_s == b.generators[g].h_s);
  for (std::size_t l = 0; l < a.loads.size(); ++l) {
    CHECK(a.loads[l].bus == b.loads[l].bus);
    CHECK(a.loads[l].p_mw == b.loads[l].p_mw);
  }
}

TEST_CASE("power flow reports divergence as a solver error") {
  // A physically impossible load level cannot be served over the line.
  const GridModel grid = parse_grid(two_bus_json(0.0, 0.1, 0.0, "pq", 5000.0));
  CHECK_THROWS_AS(solve_power_flow(grid, 1e-8, 20), SolveError);
}
