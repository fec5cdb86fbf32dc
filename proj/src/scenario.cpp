#include "gridosc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace gridosc::scenario {

namespace fs = std::filesystem;
using nlohmann::json;

Factor parse_factor(const std::string& name) {
  if (name == "inertia") return Factor::kInertia;
  if (name == "penetration") return Factor::kPenetration;
  if (name == "sizing") return Factor::kSizing;
  if (name == "band") return Factor::kBand;
  if (name == "siting") return Factor::kSiting;
  throw ConfigError("unknown sweep factor '" + name + "'");
}

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("scenario: unknown key '" + key + "' in " + context);
}

const std::set<std::string> kAnalyses = {"prony",        "fft",
                                         "eig",          "modeshape",
                                         "pseudo_energy", "peak_to_peak"};

}  // namespace

std::string ScenarioConfig::canonical_json() const {
  json j;
  j["grid"] = grid_path;
  j["horizon_s"] = horizon_s;
  j["dt_s"] = dt_s;
  j["discard_s"] = discard_s;
  j["seeds"] = seeds;
  j["inertia_factor"] = inertia_factor;
  j["penetration_multiplier"] = penetration_multiplier;
  if (has_f0_override) j["f0_range_hz"] = {f0_min_hz, f0_max_hz};
  if (sizing.count > 0)
    j["sizing_plan"] = {{"count", sizing.count},
                        {"capacity_mw", sizing.capacity_mw},
                        {"total_mw", sizing.declared_total_mw}};
  if (!siting.empty()) j["siting_plan"] = siting;
  j["analyses"] = std::vector<std::string>(analyses.begin(), analyses.end());
  j["sim"] = {{"integrator", sim.integrator == dynsim::Integrator::kRk4 ? "rk4" : "trapezoidal"},
              {"network_tol", sim.network_tol_pu},
              {"voltage_floor", sim.voltage_floor_pu}};
  j["datacenters"] = json::array();
  for (const auto& dc : datacenters)
    j["datacenters"].push_back({{"bus", dc.bus},
                                {"capacity_mw", dc.capacity_mw},
                                {"steady_fraction", dc.steady_fraction},
                                {"fluct_fraction", dc.fluct_fraction},
                                {"mix", workload::to_json(dc.mix)}});
  return j.dump();
}

std::uint64_t ScenarioConfig::config_hash() const { return fnv1a(canonical_json()); }

ScenarioConfig parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: JSON parse failure: ") + e.what());
  }
  reject_unknown_keys(j, {"grid", "horizon_s", "dt_s", "discard_s", "seeds",
                          "inertia_factor", "penetration_multiplier", "f0_range_hz",
                          "sizing_plan", "siting_plan", "analyses", "sim", "datacenters"},
                      "top level");
  ScenarioConfig cfg;
  cfg.grid_path = j.at("grid").get<std::string>();
  cfg.horizon_s = j.value("horizon_s", cfg.horizon_s);
  cfg.dt_s = j.value("dt_s", cfg.dt_s);
  cfg.discard_s = j.value("discard_s", cfg.discard_s);
  cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{1});
  if (cfg.seeds.empty()) throw ConfigError("scenario: seeds must be non-empty");
  cfg.inertia_factor = j.value("inertia_factor", 1.0);
  cfg.penetration_multiplier = j.value("penetration_multiplier", 1.0);
  if (!(cfg.penetration_multiplier > 0.0))
    throw ConfigError("scenario: penetration_multiplier must be positive");
  if (j.contains("f0_range_hz")) {
    const auto range = j.at("f0_range_hz").get<std::vector<double>>();
    if (range.size() != 2) throw ConfigError("scenario: f0_range_hz must be [lo, hi]");
    cfg.has_f0_override = true;
    cfg.f0_min_hz = range[0];
    cfg.f0_max_hz = range[1];
  }
  if (j.contains("sizing_plan")) {
    const json& sp = j.at("sizing_plan");
    reject_unknown_keys(sp, {"count", "capacity_mw", "total_mw"}, "sizing_plan");
    cfg.sizing.count = sp.at("count").get<int>();
    cfg.sizing.capacity_mw = sp.at("capacity_mw").get<double>();
    cfg.sizing.declared_total_mw = sp.value("total_mw", 0.0);
    if (cfg.sizing.declared_total_mw > 0.0) {
      const double actual = cfg.sizing.count * cfg.sizing.capacity_mw;
      // The settings table itself rounds (2.3 x 3 ~ 7), so allow 2%.
      if (std::abs(actual - cfg.sizing.declared_total_mw) >
          0.02 * cfg.sizing.declared_total_mw)
        throw ConfigError("scenario: sizing plan total " + std::to_string(actual) +
                          " MW inconsistent with declared " +
                          std::to_string(cfg.sizing.declared_total_mw) + " MW");
    }
  }
  if (j.contains("siting_plan")) cfg.siting = j.at("siting_plan").get<std::vector<int>>();
  if (j.contains("analyses")) {
    for (const auto& a : j.at("analyses")) {
      const auto name = a.get<std::string>();
      if (!kAnalyses.count(name)) throw ConfigError("scenario: unknown analysis '" + name + "'");
      cfg.analyses.insert(name);
    }
  }
  if (j.contains("sim")) {
    const json& js = j.at("sim");
    reject_unknown_keys(js, {"integrator", "network_tol", "voltage_floor"}, "sim");
    const auto integ = js.value("integrator", std::string("rk4"));
    if (integ == "rk4")
      cfg.sim.integrator = dynsim::Integrator::kRk4;
    else if (integ == "trapezoidal")
      cfg.sim.integrator = dynsim::Integrator::kTrapezoidal;
    else
      throw ConfigError("scenario: unknown integrator '" + integ + "'");
    cfg.sim.network_tol_pu = js.value("network_tol", cfg.sim.network_tol_pu);
    cfg.sim.voltage_floor_pu = js.value("voltage_floor", cfg.sim.voltage_floor_pu);
  }
  for (const auto& jd : j.value("datacenters", json::array())) {
    reject_unknown_keys(jd, {"bus", "capacity_mw", "steady_fraction", "fluct_fraction", "mix"},
                        "datacenter");
    netmodel::DatacenterSpec dc;
    dc.bus = jd.at("bus").get<int>();
    dc.capacity_mw = jd.at("capacity_mw").get<double>();
    dc.steady_fraction = jd.value("steady_fraction", 0.8);
    dc.fluct_fraction = jd.value("fluct_fraction", 0.2);
    if (jd.contains("mix"))
      dc.mix = workload::mix_from_json(jd.at("mix"));
    else
      dc.mix = workload::default_mix(dc.fluct_fraction * dc.capacity_mw);
    cfg.datacenters.push_back(dc);
  }
  cfg.sim.dt_s = cfg.dt_s;
  cfg.sim.horizon_s = cfg.horizon_s;
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

namespace {

/// Final datacenter list after sizing/siting/penetration adjustments.
/// Traces are re-scaled and re-sited rather than re-drawn: the mix
/// parameters change only in nominal power, never in the draw sequence.
std::vector<netmodel::DatacenterSpec> resolve_datacenters(const ScenarioConfig& cfg) {
  std::vector<netmodel::DatacenterSpec> dcs = cfg.datacenters;

  if (cfg.sizing.count > 0) {
    std::vector<int> sites = cfg.siting;
    if (sites.empty())
      for (const auto& dc : cfg.datacenters) sites.push_back(dc.bus);
    if (sites.empty()) throw ConfigError("scenario: sizing plan needs site buses");
    const netmodel::DatacenterSpec tmpl =
        cfg.datacenters.empty() ? netmodel::DatacenterSpec{} : cfg.datacenters.front();
    dcs.clear();
    for (int i = 0; i < cfg.sizing.count; ++i) {
      netmodel::DatacenterSpec dc = tmpl;
      dc.bus = sites[static_cast<std::size_t>(i) % sites.size()];
      dc.capacity_mw = cfg.sizing.capacity_mw;
      dc.mix = tmpl.mix;
      const double nominal = dc.mix.nominal_mw();
      const double target = dc.fluct_fraction * dc.capacity_mw;
      if (nominal > 0.0)
        dc.mix.scale_nominal(target / nominal);
      else
        dc.mix = workload::default_mix(target);
      dcs.push_back(dc);
    }
  } else if (!cfg.siting.empty()) {
    // Redistribute the existing total capacity equally across the sites.
    double total = 0.0;
    for (const auto& dc : dcs) total += dc.capacity_mw;
    const netmodel::DatacenterSpec tmpl =
        dcs.empty() ? netmodel::DatacenterSpec{} : dcs.front();
    dcs.clear();
    const double per_site = total / static_cast<double>(cfg.siting.size());
    for (int bus : cfg.siting) {
      netmodel::DatacenterSpec dc = tmpl;
      dc.bus = bus;
      dc.capacity_mw = per_site;
      dc.mix = tmpl.mix;
      const double nominal = dc.mix.nominal_mw();
      const double target = dc.fluct_fraction * per_site;
      if (nominal > 0.0)
        dc.mix.scale_nominal(target / nominal);
      else
        dc.mix = workload::default_mix(target);
      dcs.push_back(dc);
    }
  }

  for (auto& dc : dcs) {
    dc.capacity_mw *= cfg.penetration_multiplier;
    dc.mix.scale_nominal(cfg.penetration_multiplier);
    if (cfg.has_f0_override) {
      dc.mix.dominant.f0_min_hz = cfg.f0_min_hz;
      dc.mix.dominant.f0_max_hz = cfg.f0_max_hz;
    }
  }
  return dcs;
}

netmodel::GridModel resolve_grid(const ScenarioConfig& cfg, const netmodel::GridModel& base) {
  netmodel::GridModel grid = base;
  for (const auto& dc : resolve_datacenters(cfg)) grid = netmodel::attach_datacenter(grid, dc);
  return netmodel::scale_inertia(grid, cfg.inertia_factor);
}

}  // namespace

ResolvedRun resolve_run(const ScenarioConfig& cfg, const netmodel::GridModel& base,
                        std::uint64_t seed) {
  ResolvedRun run;
  run.grid = resolve_grid(cfg, base);
  const auto dcs = resolve_datacenters(cfg);
  for (std::size_t site = 0; site < dcs.size(); ++site) {
    const auto trace = workload::aggregate_ai_load(dcs[site].mix, cfg.horizon_s, cfg.dt_s,
                                                   mix_seed(seed, site));
    auto [it, inserted] = run.forcings.emplace(dcs[site].bus, trace);
    if (!inserted)
      for (std::size_t k = 0; k < trace.size(); ++k)
        it->second.values_mw[k] += trace.values_mw[k];
  }
  return run;
}

namespace {

struct WindowedSeries {
  std::vector<double> values;
  std::vector<double> time;
};

WindowedSeries window_series(const std::vector<double>& values,
                             const std::vector<double>& time, double discard_s) {
  WindowedSeries w;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (time[k] < discard_s) continue;
    w.values.push_back(values[k]);
    w.time.push_back(time[k]);
  }
  return w;
}

}  // namespace

ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  ScenarioReport report;
  report.config = cfg;
  report.config_hash = cfg.config_hash();

  const netmodel::GridModel base = netmodel::load_grid(cfg.grid_path);
  const netmodel::GridModel grid = resolve_grid(cfg, base);
  const netmodel::OperatingPoint op = netmodel::solve_power_flow(grid);

  if (cfg.analyses.count("eig"))
    report.eigen_modes = modal::eigen_modes(modal::linearize(grid, op));

  for (std::uint64_t seed : cfg.seeds) {
    SeedEntry entry;
    entry.seed = seed;
    ResolvedRun run = resolve_run(cfg, base, seed);
    dynsim::SimOptions opts = cfg.sim;
    opts.dt_s = cfg.dt_s;
    opts.horizon_s = cfg.horizon_s;
    entry.sim = dynsim::simulate(run.grid, run.forcings, opts);
    entry.sim.seed = seed;
    entry.aborted = entry.sim.aborted;
    entry.abort_reason = entry.sim.abort_reason;
    if (entry.aborted) {
      ++report.aborted_count;
      report.entries.push_back(std::move(entry));
      continue;
    }

    // Peak-to-peak over the post-transient window; locate the worst bus.
    const auto ng = static_cast<int>(run.grid.generators.size());
    int worst_gen = 0;
    for (int gi = 0; gi < ng; ++gi) {
      const auto series = entry.sim.gen_frequency_series(gi);
      const auto w = window_series(series, entry.sim.time_s, cfg.discard_s);
      const double p2p = dynsim::peak_to_peak(w.values);
      if (p2p > entry.max_peak_to_peak_hz) {
        entry.max_peak_to_peak_hz = p2p;
        entry.max_p2p_gen_bus = entry.sim.gen_buses[static_cast<std::size_t>(gi)];
        worst_gen = gi;
      }
    }

    const auto worst =
        window_series(entry.sim.gen_frequency_series(worst_gen), entry.sim.time_s,
                      cfg.discard_s);
    if (cfg.analyses.count("fft")) {
      // Analyze the deviation from the window mean; otherwise the nominal
      // frequency (~60 Hz) leaks into the lowest bins and masks the peaks.
      std::vector<double> deviation = worst.values;
      double mean = 0.0;
      for (double v : deviation) mean += v;
      mean /= static_cast<double>(deviation.size());
      for (double& v : deviation) v -= mean;
      entry.spectrum = modal::fft_spectrum(deviation, cfg.dt_s, modal::Window::kHann);
      for (std::size_t k = 1; k < entry.spectrum.amplitude.size(); ++k) {
        if (entry.spectrum.amplitude[k] > entry.dominant_amplitude) {
          entry.dominant_amplitude = entry.spectrum.amplitude[k];
          entry.dominant_freq_hz = entry.spectrum.freq_hz[k];
        }
      }
    }
    if (cfg.analyses.count("prony") || cfg.analyses.count("pseudo_energy") ||
        cfg.analyses.count("modeshape")) {
      entry.prony_modes = modal::prony_fit(worst.values, cfg.dt_s, 0);
      // Rank by energy sustained over the window so that persistent
      // oscillations outrank fast-decaying fit artifacts.
      std::stable_sort(entry.prony_modes.begin(), entry.prony_modes.end(),
                       [](const modal::ModeEstimate& a, const modal::ModeEstimate& b) {
                         return a.pseudo_energy > b.pseudo_energy;
                       });
    }
    if (cfg.analyses.count("modeshape") && !entry.prony_modes.empty()) {
      std::map<std::string, std::vector<double>> signals;
      for (int gi = 0; gi < ng; ++gi)
        signals["gen_" + std::to_string(entry.sim.gen_buses[static_cast<std::size_t>(gi)])] =
            window_series(entry.sim.gen_frequency_series(gi), entry.sim.time_s,
                          cfg.discard_s)
                .values;
      entry.mode_shape = modal::mode_shape(signals, cfg.dt_s,
                                           entry.prony_modes.front().frequency_hz, 0.15);
    }
    report.entries.push_back(std::move(entry));
  }

  // Aggregates over completed runs.
  double freq_sum = 0.0;
  int freq_count = 0;
  const SeedEntry* worst_entry = nullptr;
  for (const auto& e : report.entries) {
    if (e.aborted) continue;
    report.max_peak_to_peak_hz = std::max(report.max_peak_to_peak_hz, e.max_peak_to_peak_hz);
    if (e.dominant_amplitude > 0.0) {
      freq_sum += e.dominant_freq_hz;
      ++freq_count;
    }
    if (!worst_entry || e.max_peak_to_peak_hz > worst_entry->max_peak_to_peak_hz)
      worst_entry = &e;
  }
  if (freq_count > 0) report.mean_dominant_freq_hz = freq_sum / freq_count;
  if (worst_entry && cfg.analyses.count("pseudo_energy")) {
    std::vector<double> energies;
    for (const auto& m : worst_entry->prony_modes) energies.push_back(m.pseudo_energy);
    report.pseudo_energy_ranking = modal::normalize_energies(energies);
  }
  return report;
}

ScenarioConfig apply_level(const ScenarioConfig& cfg, Factor factor,
                           const std::string& level_json, std::string* label_out) {
  const json level = json::parse(level_json);
  ScenarioConfig out = cfg;
  switch (factor) {
    case Factor::kInertia:
      out.inertia_factor = level.get<double>();
      if (label_out) *label_out = "inertia_" + std::to_string(out.inertia_factor);
      break;
    case Factor::kPenetration:
      out.penetration_multiplier = level.get<double>();
      if (label_out) *label_out = "penetration_" + std::to_string(out.penetration_multiplier);
      break;
    case Factor::kBand: {
      const auto range = level.get<std::vector<double>>();
      if (range.size() != 2) throw ConfigError("band level must be [lo, hi]");
      out.has_f0_override = true;
      out.f0_min_hz = range[0];
      out.f0_max_hz = range[1];
      if (label_out)
        *label_out = "band_" + std::to_string(range[0]) + "_" + std::to_string(range[1]);
      break;
    }
    case Factor::kSizing:
      out.sizing.count = level.at("count").get<int>();
      out.sizing.capacity_mw = level.at("capacity_mw").get<double>();
      out.sizing.declared_total_mw = level.value("total_mw", 0.0);
      if (label_out) *label_out = "sizing_" + std::to_string(out.sizing.count) + "x";
      break;
    case Factor::kSiting:
      out.siting = level.get<std::vector<int>>();
      if (label_out) *label_out = "siting_" + std::to_string(out.siting.size()) + "_sites";
      break;
  }
  return out;
}

std::vector<ScenarioReport> run_factor_sweep(const ScenarioConfig& cfg, Factor factor,
                                             const std::string& levels_json) {
  const json levels = json::parse(levels_json);
  if (!levels.is_array() || levels.empty())
    throw ConfigError("sweep: levels must be a non-empty JSON array");
  std::vector<ScenarioReport> reports;
  for (const auto& level : levels) {
    const ScenarioConfig level_cfg = apply_level(cfg, factor, level.dump());
    reports.push_back(run_scenario(level_cfg));  // shared seeds: paired comparison
  }
  return reports;
}

void export_report(const ScenarioReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> manifest;

  auto mode_table_json = [](const std::vector<modal::ModeEstimate>& modes) {
    json arr = json::array();
    for (const auto& m : modes)
      arr.push_back({{"frequency_hz", m.frequency_hz},
                     {"sigma_per_s", m.sigma_per_s},
                     {"damping_ratio", m.damping_ratio},
                     {"amplitude", m.amplitude},
                     {"phase_rad", m.phase_rad},
                     {"pseudo_energy", m.pseudo_energy},
                     {"unstable", m.unstable}});
    return arr;
  };

  for (const auto& entry : report.entries) {
    const std::string seed_dir = "seed_" + std::to_string(entry.seed);
    dynsim::export_sim_result(entry.sim, (fs::path(out_dir) / seed_dir).string());
    for (const char* f : {"frequency_hz.csv", "angle_rad.csv", "voltage_pu.csv",
                          "sim_meta.json"})
      manifest.push_back(seed_dir + "/" + f);
    if (entry.aborted) continue;

    if (!entry.prony_modes.empty() || report.config.analyses.count("prony")) {
      std::ofstream out(fs::path(out_dir) / seed_dir / "prony_modes.json");
      out << mode_table_json(entry.prony_modes).dump(2) << "\n";
      manifest.push_back(seed_dir + "/prony_modes.json");
      std::ofstream csv(fs::path(out_dir) / seed_dir / "prony_modes.csv");
      csv << "frequency_hz,sigma_per_s,damping_ratio,amplitude,phase_rad,pseudo_energy,unstable\n";
      csv.precision(17);
      for (const auto& m : entry.prony_modes)
        csv << m.frequency_hz << "," << m.sigma_per_s << "," << m.damping_ratio << ","
            << m.amplitude << "," << m.phase_rad << "," << m.pseudo_energy << ","
            << (m.unstable ? 1 : 0) << "\n";
      manifest.push_back(seed_dir + "/prony_modes.csv");
    }
    if (report.config.analyses.count("fft")) {
      std::ofstream csv(fs::path(out_dir) / seed_dir / "spectrum.csv");
      csv << "freq_hz,amplitude\n";
      csv.precision(17);
      for (std::size_t k = 0; k < entry.spectrum.freq_hz.size(); ++k)
        csv << entry.spectrum.freq_hz[k] << "," << entry.spectrum.amplitude[k] << "\n";
      manifest.push_back(seed_dir + "/spectrum.csv");
    }
    if (report.config.analyses.count("modeshape")) {
      json js;
      for (const auto& [name, shape] : entry.mode_shape)
        js[name] = {{"amplitude", shape.amplitude}, {"phase_rad", shape.phase_rad}};
      std::ofstream out(fs::path(out_dir) / seed_dir / "mode_shape.json");
      out << js.dump(2) << "\n";
      manifest.push_back(seed_dir + "/mode_shape.json");
    }
  }

  if (report.config.analyses.count("eig")) {
    std::ofstream out(fs::path(out_dir) / "eigen_modes.json");
    out << mode_table_json(report.eigen_modes).dump(2) << "\n";
    manifest.push_back("eigen_modes.json");
  }

  {
    std::ofstream csv(fs::path(out_dir) / "peak_to_peak.csv");
    csv << "seed,max_peak_to_peak_hz,worst_gen_bus,aborted\n";
    csv.precision(17);
    for (const auto& e : report.entries)
      csv << e.seed << "," << e.max_peak_to_peak_hz << "," << e.max_p2p_gen_bus << ","
          << (e.aborted ? 1 : 0) << "\n";
    manifest.push_back("peak_to_peak.csv");
  }
  {
    std::ofstream csv(fs::path(out_dir) / "prony_scatter.csv");
    csv << "seed,frequency_hz,damping_ratio,amplitude\n";
    csv.precision(17);
    for (const auto& e : report.entries)
      for (const auto& m : e.prony_modes)
        csv << e.seed << "," << m.frequency_hz << "," << m.damping_ratio << ","
            << m.amplitude << "\n";
    manifest.push_back("prony_scatter.csv");
  }

  json summary;
  summary["config_hash"] = report.config_hash;
  summary["seeds"] = report.config.seeds;
  summary["aborted_count"] = report.aborted_count;
  summary["max_peak_to_peak_hz"] = report.max_peak_to_peak_hz;
  summary["mean_dominant_freq_hz"] = report.mean_dominant_freq_hz;
  summary["pseudo_energy_ranking"] = report.pseudo_energy_ranking;
  summary["config"] = json::parse(report.config.canonical_json());
  {
    std::ofstream out(fs::path(out_dir) / "summary.json");
    out << summary.dump(2) << "\n";
    manifest.push_back("summary.json");
  }

  std::sort(manifest.begin(), manifest.end());
  json jm;
  jm["files"] = manifest;
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << jm.dump(2) << "\n";
}

}  // namespace gridosc::scenario
