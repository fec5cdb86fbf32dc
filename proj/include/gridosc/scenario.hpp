#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gridosc/dynsim.hpp"
#include "gridosc/modal.hpp"
#include "gridosc/netmodel.hpp"
#include "gridosc/workload.hpp"

namespace gridosc::scenario {

enum class Factor { kInertia, kPenetration, kSizing, kBand, kSiting };

Factor parse_factor(const std::string& name);

struct SizingPlan {
  int count = 0;
  double capacity_mw = 0.0;
  double declared_total_mw = 0.0;  // 0 = unchecked
};

struct ScenarioConfig {
  std::string grid_path;
  std::vector<netmodel::DatacenterSpec> datacenters;
  double inertia_factor = 1.0;
  double penetration_multiplier = 1.0;
  bool has_f0_override = false;
  double f0_min_hz = 0.0, f0_max_hz = 0.0;  // dominant-training band override
  SizingPlan sizing;                         // count == 0 means unset
  std::vector<int> siting;                   // empty means unset
  double horizon_s = 60.0;
  double dt_s = 0.01;
  std::vector<std::uint64_t> seeds;
  std::set<std::string> analyses;  // prony, fft, eig, modeshape, pseudo_energy, peak_to_peak
  dynsim::SimOptions sim;
  double discard_s = 5.0;  // startup transient dropped before Prony/FFT

  std::string canonical_json() const;
  std::uint64_t config_hash() const;
};

struct SeedEntry {
  std::uint64_t seed = 0;
  bool aborted = false;
  std::string abort_reason;
  double max_peak_to_peak_hz = 0.0;
  int max_p2p_gen_bus = 0;
  double dominant_freq_hz = 0.0;   // largest non-DC FFT amplitude across generators
  double dominant_amplitude = 0.0;
  std::vector<modal::ModeEstimate> prony_modes;  // of the max-oscillation generator
  modal::Spectrum spectrum;                       // of the max-oscillation generator
  std::map<std::string, modal::ShapeEntry> mode_shape;
  dynsim::SimResult sim;
};

struct ScenarioReport {
  ScenarioConfig config;
  std::uint64_t config_hash = 0;
  std::vector<SeedEntry> entries;
  std::vector<modal::ModeEstimate> eigen_modes;   // from linearization
  double max_peak_to_peak_hz = 0.0;               // across seeds
  double mean_dominant_freq_hz = 0.0;
  std::vector<double> pseudo_energy_ranking;      // normalized, per prony mode of worst seed
  int aborted_count = 0;
};

ScenarioConfig parse_scenario(const std::string& json_text);
ScenarioConfig load_scenario(const std::string& path);

/// Resolved per-run grid and traces for one seed: datacenters (after
/// sizing/siting/penetration adjustments) attached, inertia scaled,
/// per-site traces drawn with sub-seeds mix_seed(run_seed, site_index).
struct ResolvedRun {
  netmodel::GridModel grid;
  std::map<int, workload::PowerTrace> forcings;
};
ResolvedRun resolve_run(const ScenarioConfig& cfg, const netmodel::GridModel& base,
                        std::uint64_t seed);

ScenarioReport run_scenario(const ScenarioConfig& cfg);

struct SweepLevel {
  std::string label;
  ScenarioConfig config;
};

/// One report per level with shared seeds (paired comparison).
std::vector<ScenarioReport> run_factor_sweep(const ScenarioConfig& cfg, Factor factor,
                                             const std::string& levels_json);

/// Apply one sweep level to a config (exposed for tests).
ScenarioConfig apply_level(const ScenarioConfig& cfg, Factor factor,
                           const std::string& level_json, std::string* label_out = nullptr);

/// CSV time series, JSON mode tables, aggregate summary and plot-ready CSVs
/// with a manifest listing every artifact file.
void export_report(const ScenarioReport& report, const std::string& out_dir);

}  // namespace gridosc::scenario
