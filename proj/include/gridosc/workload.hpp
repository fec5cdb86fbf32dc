#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridosc/common.hpp"

namespace gridosc::workload {

/// Parameters of the periodic training power model: a cycle alternates a
/// high-power up phase and a low-power down phase around a baseline
/// fluctuation frequency drawn once per workload.
struct TrainingParams {
  double f0_min_hz = 0.5;
  double f0_max_hz = 1.5;
  double sigma_xi = 0.1;       // cycle-duration jitter std
  double r_min = 0.55;         // up-phase duty bounds
  double r_max = 0.8;
  double sigma_delta = 0.05;   // iteration baseline-shift std
  double mu_delta = 0.3;       // nominal down-phase depression
  double sigma_eta_up = 0.035;
  double sigma_eta_down = 0.02;
  double p_hat_mw = 100.0;     // nominal up-phase power

  void validate() const;
};

/// Fine-tuning early-training model: tail/idle phases, lower baseline
/// frequency, deeper idle depression.
struct FinetuneParams {
  double f1_min_hz = 0.3;
  double f1_max_hz = 0.7;
  double sigma_zeta = 0.1;
  double r_min = 0.7;
  double r_max = 0.9;
  double sigma_delta_ft = 0.03;
  double mu_delta_ft = 0.8;
  double sigma_eta_tail = 0.02;
  double sigma_eta_idle = 0.0125;
  double p_hat_mw = 50.0;

  void validate() const;
};

/// One realized iteration of the cycle process.
struct CycleRealization {
  double start_time_s = 0.0;
  double cycle_duration_s = 0.0;
  double high_duration_s = 0.0;  // up or tail phase
  double low_duration_s = 0.0;   // down or idle phase
  double xi_or_zeta = 0.0;
  double duty = 0.0;
  double high_shift = 0.0;  // multiplies p_hat as (1 + high_shift)
  double low_shift = 0.0;   // multiplies p_hat as (1 - low_shift)
};

/// Uniformly sampled power demand in MW.
struct PowerTrace {
  double dt_s = 0.0;
  double t0_s = 0.0;
  std::vector<double> values_mw;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> sub_seeds;  // set by aggregation
  std::int64_t clamped_samples = 0;      // negative samples clamped to 0 MW

  std::size_t size() const { return values_mw.size(); }
  double time_at(std::size_t k) const { return t0_s + dt_s * static_cast<double>(k); }
  /// Zero-order-hold value at arbitrary time.
  double value_at(double t_s) const;
};

/// Datacenter workload composition: one dominant training job plus pools of
/// small training and fine-tuning jobs.
struct WorkloadMix {
  TrainingParams dominant;
  std::vector<TrainingParams> small_training;
  std::vector<FinetuneParams> finetune;

  /// Sum of nominal up-phase powers across all members.
  double nominal_mw() const;
  /// Scale every member's nominal power by a common factor.
  void scale_nominal(double factor);
};

/// Build a 9:0.5:0.5 mix for a fluctuating nominal budget, with Table-style
/// default distribution parameters and the given pool member counts.
WorkloadMix default_mix(double fluct_budget_mw, int n_small_training = 2, int n_finetune = 2);

/// Draw the cycle timeline covering [0, horizon). Exposed so statistics can
/// be recomputed directly from the realized iterations.
std::vector<CycleRealization> realize_training_cycles(const TrainingParams& p, double horizon_s,
                                                      Rng& rng, double* f0_out = nullptr);
std::vector<CycleRealization> realize_finetune_cycles(const FinetuneParams& p, double horizon_s,
                                                      Rng& rng, double* f1_out = nullptr);

PowerTrace generate_training_trace(const TrainingParams& p, double horizon_s, double dt_s,
                                   std::uint64_t seed);
PowerTrace generate_finetune_trace(const FinetuneParams& p, double horizon_s, double dt_s,
                                   std::uint64_t seed);

/// Pointwise sum of independently seeded member traces on a shared grid.
/// Sub-seeds derive as mix_seed(seed, workload_index) in declaration order
/// (dominant, small training, fine-tuning).
PowerTrace aggregate_ai_load(const WorkloadMix& mix, double horizon_s, double dt_s,
                             std::uint64_t seed);

struct TraceStats {
  double mean_mw = 0.0;
  double std_mw = 0.0;
  double min_mw = 0.0;
  double max_mw = 0.0;
  double dominant_freq_hz = 0.0;
  bool dominant_freq_defined = false;
};

TraceStats trace_stats(const PowerTrace& trace);

// JSON (de)serialization for parameter documents; absent keys fall back to
// the Table-style defaults above.
TrainingParams training_params_from_json(const nlohmann::json& j);
FinetuneParams finetune_params_from_json(const nlohmann::json& j);
WorkloadMix mix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingParams& p);
nlohmann::json to_json(const FinetuneParams& p);
nlohmann::json to_json(const WorkloadMix& mix);

// CSV (`time_s,power_mw`) and JSON import/export.
void save_trace_csv(const PowerTrace& trace, const std::string& path);
void save_trace_json(const PowerTrace& trace, const std::string& path);
PowerTrace load_trace_csv(const std::string& path);
PowerTrace load_trace_json(const std::string& path);

}  // namespace gridosc::workload
