// Command-line front end: workload generation, dynamic simulation,
// signal analysis, and scenario batches.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridosc/dynsim.hpp"
#include "gridosc/modal.hpp"
#include "gridosc/netmodel.hpp"
#include "gridosc/scenario.hpp"
#include "gridosc/workload.hpp"

namespace {

using namespace gridosc;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

/// First numeric column of a CSV with a header row (time in column 0).
std::vector<double> read_signal_csv(const std::string& path, double* dt_out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> times, values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    times.push_back(std::stod(cell));
    std::getline(row, cell, ',');
    values.push_back(std::stod(cell));
  }
  if (values.size() < 2) throw ConfigError("signal CSV: need at least 2 rows");
  *dt_out = times[1] - times[0];
  return values;
}

void print_modes(const std::vector<modal::ModeEstimate>& modes) {
  std::cout << "frequency_hz,sigma_per_s,damping_ratio,amplitude,phase_rad,"
               "pseudo_energy,unstable\n";
  for (const auto& m : modes)
    std::cout << m.frequency_hz << "," << m.sigma_per_s << "," << m.damping_ratio << ","
              << m.amplitude << "," << m.phase_rad << "," << m.pseudo_energy << ","
              << (m.unstable ? 1 : 0) << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"AI-workload grid oscillation workbench"};
  app.require_subcommand(1);

  // workload gen
  auto* workload_cmd = app.add_subcommand("workload", "stochastic AI workload traces");
  auto* gen = workload_cmd->add_subcommand("gen", "generate a power trace");
  std::string kind = "training", params_path, out_path = "trace.csv";
  double horizon = 60.0, dt = 0.01;
  std::uint64_t seed = 1;
  gen->add_option("--kind", kind, "training|finetune|mix")->required();
  gen->add_option("--params", params_path, "parameter JSON file");
  gen->add_option("--horizon", horizon, "trace length, s")->required();
  gen->add_option("--dt", dt, "sample spacing, s")->required();
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--out", out_path, "output path (.csv or .json)");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "time-domain simulation");
  std::string grid_path, scenario_path, out_dir = "out";
  sim_cmd->add_option("--grid", grid_path, "grid JSON")->required();
  sim_cmd->add_option("--scenario", scenario_path, "scenario JSON")->required();
  sim_cmd->add_option("--seed", seed, "RNG seed");
  sim_cmd->add_option("--out", out_dir, "output directory");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "signal analytics");
  std::string analysis, input_path, window_name = "rectangular";
  int order = 0;
  double target_hz = 0.0;
  analyze->add_option("kind", analysis, "prony|fft|eig|modeshape")->required();
  analyze->add_option("--input", input_path, "input CSV (time series) or grid JSON for eig")
      ->required();
  analyze->add_option("--order", order, "Prony model order (0 = auto)");
  analyze->add_option("--window", window_name, "rectangular|hann");
  analyze->add_option("--target-hz", target_hz, "mode-shape target frequency");

  // scenario
  auto* scen_cmd = app.add_subcommand("scenario", "config-driven experiment batches");
  auto* scen_run = scen_cmd->add_subcommand("run", "run one scenario");
  std::string config_path, factor_name, levels_json;
  int parallel = 1;
  scen_run->add_option("--config", config_path, "scenario JSON")->required();
  scen_run->add_option("--out", out_dir, "output directory")->required();
  scen_run->add_option("--parallel", parallel, "reserved; runs are sequential");
  auto* scen_sweep = scen_cmd->add_subcommand("sweep", "factor sweep");
  scen_sweep->add_option("--config", config_path, "scenario JSON")->required();
  scen_sweep->add_option("--factor", factor_name, "inertia|penetration|sizing|band|siting")
      ->required();
  scen_sweep->add_option("--levels", levels_json, "levels as a JSON array")->required();
  scen_sweep->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    workload::PowerTrace trace;
    const nlohmann::json params =
        params_path.empty() ? nlohmann::json::object() : read_json_file(params_path);
    if (kind == "training")
      trace = workload::generate_training_trace(workload::training_params_from_json(params),
                                                horizon, dt, seed);
    else if (kind == "finetune")
      trace = workload::generate_finetune_trace(workload::finetune_params_from_json(params),
                                                horizon, dt, seed);
    else if (kind == "mix")
      trace = workload::aggregate_ai_load(workload::mix_from_json(params), horizon, dt, seed);
    else
      throw ConfigError("workload gen: unknown kind '" + kind + "'");
    if (out_path.ends_with(".json"))
      workload::save_trace_json(trace, out_path);
    else
      workload::save_trace_csv(trace, out_path);
    const auto stats = workload::trace_stats(trace);
    std::cout << "wrote " << out_path << ": mean " << stats.mean_mw << " MW, std "
              << stats.std_mw << " MW\n";
    return 0;
  }

  if (sim_cmd->parsed()) {
    auto cfg = scenario::load_scenario(scenario_path);
    cfg.grid_path = grid_path;
    cfg.seeds = {seed};
    const auto report = scenario::run_scenario(cfg);
    scenario::export_report(report, out_dir);
    std::cout << "wrote " << out_dir << "; max peak-to-peak "
              << report.max_peak_to_peak_hz << " Hz\n";
    return report.aborted_count > 0 ? 2 : 0;
  }

  if (analyze->parsed()) {
    if (analysis == "eig") {
      const auto grid = netmodel::load_grid(input_path);
      const auto op = netmodel::solve_power_flow(grid);
      print_modes(modal::eigen_modes(modal::linearize(grid, op)));
      return 0;
    }
    double sig_dt = 0.0;
    const auto signal = read_signal_csv(input_path, &sig_dt);
    if (analysis == "prony") {
      print_modes(modal::prony_fit(signal, sig_dt, order));
    } else if (analysis == "fft") {
      const auto win =
          window_name == "hann" ? modal::Window::kHann : modal::Window::kRectangular;
      const auto spec = modal::fft_spectrum(signal, sig_dt, win);
      std::cout << "freq_hz,amplitude\n";
      for (std::size_t k = 0; k < spec.freq_hz.size(); ++k)
        std::cout << spec.freq_hz[k] << "," << spec.amplitude[k] << "\n";
    } else if (analysis == "modeshape") {
      // All columns of the CSV are treated as one signal group.
      std::ifstream in(input_path);
      std::string header;
      std::getline(in, header);
      std::vector<std::string> names;
      {
        std::istringstream row(header);
        std::string cell;
        std::getline(row, cell, ',');  // time column
        while (std::getline(row, cell, ',')) names.push_back(cell);
      }
      std::map<std::string, std::vector<double>> signals;
      std::vector<double> times;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        times.push_back(std::stod(cell));
        for (const auto& name : names) {
          std::getline(row, cell, ',');
          signals[name].push_back(std::stod(cell));
        }
      }
      const double dt_sig = times[1] - times[0];
      const auto shape = modal::mode_shape(signals, dt_sig, target_hz, 0.15, order);
      std::cout << "signal,amplitude,phase_rad\n";
      for (const auto& [name, s] : shape)
        std::cout << name << "," << s.amplitude << "," << s.phase_rad << "\n";
    } else {
      throw ConfigError("analyze: unknown kind '" + analysis + "'");
    }
    return 0;
  }

  if (scen_run->parsed()) {
    const auto cfg = scenario::load_scenario(config_path);
    const auto report = scenario::run_scenario(cfg);
    scenario::export_report(report, out_dir);
    std::cout << "wrote " << out_dir << "; " << report.entries.size() << " runs, "
              << report.aborted_count << " aborted\n";
    return report.aborted_count > 0 ? 2 : 0;
  }
  if (scen_sweep->parsed()) {
    const auto cfg = scenario::load_scenario(config_path);
    const auto factor = scenario::parse_factor(factor_name);
    const auto reports = scenario::run_factor_sweep(cfg, factor, levels_json);
    int aborted = 0;
    const nlohmann::json levels = nlohmann::json::parse(levels_json);
    std::filesystem::create_directories(out_dir);
    std::ofstream cmp(std::filesystem::path(out_dir) / "comparison.csv");
    cmp << "level,max_peak_to_peak_hz,mean_dominant_freq_hz,aborted\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const std::string level_dir =
          (std::filesystem::path(out_dir) / ("level_" + std::to_string(i))).string();
      scenario::export_report(reports[i], level_dir);
      aborted += reports[i].aborted_count;
      cmp << levels[i].dump() << "," << reports[i].max_peak_to_peak_hz << ","
          << reports[i].mean_dominant_freq_hz << "," << reports[i].aborted_count << "\n";
    }
    std::cout << "wrote " << out_dir << "; " << reports.size() << " levels\n";
    return aborted > 0 ? 2 : 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
