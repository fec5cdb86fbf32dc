#include "gridosc/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gridosc/modal.hpp"

namespace gridosc::workload {

namespace {

void check_common(double f_min, double f_max, double r_min, double r_max, double mu,
                  const double* sigmas, std::size_t n_sigmas, double p_hat,
                  const char* kind) {
  if (!(f_min > 0.0) || !(f_min <= f_max))
    throw ConfigError(std::string(kind) + ": need 0 < f_min <= f_max");
  if (!(r_min > 0.0) || !(r_min <= r_max) || !(r_max < 1.0))
    throw ConfigError(std::string(kind) + ": need 0 < r_min <= r_max < 1");
  for (std::size_t i = 0; i < n_sigmas; ++i)
    if (sigmas[i] < 0.0) throw ConfigError(std::string(kind) + ": sigma < 0");
  if (mu < 0.0 || mu >= 1.0)
    throw ConfigError(std::string(kind) + ": need 0 <= mu_delta < 1");
  if (p_hat < 0.0) throw ConfigError(std::string(kind) + ": p_hat < 0");
}

// Shared cycle realization: duration 1/(f(1+jitter)), duty r, high level
// (1 + N(0,sigma_delta)), low level (1 - N(mu, sigma_delta)).
std::vector<CycleRealization> realize_cycles(double f_min, double f_max, double sigma_jit,
                                             double r_min, double r_max, double sigma_d,
                                             double mu_d, double horizon_s, Rng& rng,
                                             double* f_out) {
  const double f = rng.uniform(f_min, f_max);
  if (f_out) *f_out = f;
  std::vector<CycleRealization> cycles;
  double t = 0.0;
  while (t <= horizon_s) {  // the final sample may land exactly on a boundary
    CycleRealization c;
    c.start_time_s = t;
    // Jitter draws with 1 + draw <= 0.1 are rejected to keep cycle
    // durations positive and bounded.
    double jit = rng.normal(0.0, sigma_jit);
    while (1.0 + jit <= 0.1) jit = rng.normal(0.0, sigma_jit);
    c.xi_or_zeta = jit;
    c.cycle_duration_s = 1.0 / (f * (1.0 + jit));
    c.duty = rng.uniform(r_min, r_max);
    c.high_duration_s = c.duty * c.cycle_duration_s;
    c.low_duration_s = c.cycle_duration_s - c.high_duration_s;
    c.high_shift = rng.normal(0.0, sigma_d);
    c.low_shift = rng.normal(mu_d, sigma_d);
    cycles.push_back(c);
    t += c.cycle_duration_s;
  }
  return cycles;
}

PowerTrace sample_trace(const std::vector<CycleRealization>& cycles, double p_hat,
                        double sigma_eta_high, double sigma_eta_low, double horizon_s,
                        double dt_s, std::uint64_t seed, Rng& rng) {
  PowerTrace trace;
  trace.dt_s = dt_s;
  trace.t0_s = 0.0;
  trace.seed = seed;
  const auto n = static_cast<std::size_t>(std::floor(horizon_s / dt_s)) + 1;
  trace.values_mw.resize(n);
  std::size_t ci = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = dt_s * static_cast<double>(k);
    while (ci + 1 < cycles.size() &&
           t >= cycles[ci].start_time_s + cycles[ci].cycle_duration_s)
      ++ci;
    const CycleRealization& c = cycles[ci];
    const bool high = t < c.start_time_s + c.high_duration_s;
    const double eta =
        rng.normal(0.0, high ? sigma_eta_high : sigma_eta_low);
    double v = high ? p_hat * (1.0 + c.high_shift + eta)
                    : p_hat * (1.0 - c.low_shift + eta);
    if (v < 0.0) {
      v = 0.0;
      ++trace.clamped_samples;
    }
    trace.values_mw[k] = v;
  }
  return trace;
}

void check_sampling(double horizon_s, double dt_s, double f_max, double r_max) {
  if (!(horizon_s > 0.0) || !(dt_s > 0.0))
    throw ConfigError("trace generation: horizon and dt must be positive");
  if (horizon_s < 1.0 / f_max)
    throw ConfigError("trace generation: horizon shorter than one cycle");
  // Coarsest resolvable feature is the low phase at max frequency.
  if (dt_s > (1.0 - r_max) / f_max + 1e-15)
    throw ConfigError("trace generation: dt too coarse to resolve the short phase");
}

}  // namespace

void TrainingParams::validate() const {
  const double sigmas[] = {sigma_xi, sigma_delta, sigma_eta_up, sigma_eta_down};
  check_common(f0_min_hz, f0_max_hz, r_min, r_max, mu_delta, sigmas, 4, p_hat_mw,
               "TrainingParams");
}

void FinetuneParams::validate() const {
  const double sigmas[] = {sigma_zeta, sigma_delta_ft, sigma_eta_tail, sigma_eta_idle};
  check_common(f1_min_hz, f1_max_hz, r_min, r_max, mu_delta_ft, sigmas, 4, p_hat_mw,
               "FinetuneParams");
}

double PowerTrace::value_at(double t_s) const {
  if (values_mw.empty()) throw ConfigError("PowerTrace: empty trace");
  const double rel = (t_s - t0_s) / dt_s;
  auto k = static_cast<std::ptrdiff_t>(std::floor(rel));
  k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(values_mw.size()) - 1);
  return values_mw[static_cast<std::size_t>(k)];
}

double WorkloadMix::nominal_mw() const {
  double s = dominant.p_hat_mw;
  for (const auto& w : small_training) s += w.p_hat_mw;
  for (const auto& w : finetune) s += w.p_hat_mw;
  return s;
}

void WorkloadMix::scale_nominal(double factor) {
  dominant.p_hat_mw *= factor;
  for (auto& w : small_training) w.p_hat_mw *= factor;
  for (auto& w : finetune) w.p_hat_mw *= factor;
}

WorkloadMix default_mix(double fluct_budget_mw, int n_small_training, int n_finetune) {
  if (fluct_budget_mw < 0.0) throw ConfigError("default_mix: negative budget");
  WorkloadMix mix;
  mix.dominant.p_hat_mw = 0.9 * fluct_budget_mw;
  const double small_pool = 0.05 * fluct_budget_mw;
  const double ft_pool = 0.05 * fluct_budget_mw;
  for (int j = 0; j < n_small_training; ++j) {
    TrainingParams p;
    p.p_hat_mw = small_pool / std::max(1, n_small_training);
    mix.small_training.push_back(p);
  }
  for (int k = 0; k < n_finetune; ++k) {
    FinetuneParams p;
    p.p_hat_mw = ft_pool / std::max(1, n_finetune);
    mix.finetune.push_back(p);
  }
  return mix;
}

std::vector<CycleRealization> realize_training_cycles(const TrainingParams& p,
                                                      double horizon_s, Rng& rng,
                                                      double* f0_out) {
  p.validate();
  return realize_cycles(p.f0_min_hz, p.f0_max_hz, p.sigma_xi, p.r_min, p.r_max,
                        p.sigma_delta, p.mu_delta, horizon_s, rng, f0_out);
}

std::vector<CycleRealization> realize_finetune_cycles(const FinetuneParams& p,
                                                      double horizon_s, Rng& rng,
                                                      double* f1_out) {
  p.validate();
  return realize_cycles(p.f1_min_hz, p.f1_max_hz, p.sigma_zeta, p.r_min, p.r_max,
                        p.sigma_delta_ft, p.mu_delta_ft, horizon_s, rng, f1_out);
}

PowerTrace generate_training_trace(const TrainingParams& p, double horizon_s, double dt_s,
                                   std::uint64_t seed) {
  p.validate();
  check_sampling(horizon_s, dt_s, p.f0_max_hz, p.r_max);
  Rng rng(seed);
  const auto cycles = realize_training_cycles(p, horizon_s, rng);
  return sample_trace(cycles, p.p_hat_mw, p.sigma_eta_up, p.sigma_eta_down, horizon_s,
                      dt_s, seed, rng);
}

PowerTrace generate_finetune_trace(const FinetuneParams& p, double horizon_s, double dt_s,
                                   std::uint64_t seed) {
  p.validate();
  check_sampling(horizon_s, dt_s, p.f1_max_hz, p.r_max);
  Rng rng(seed);
  const auto cycles = realize_finetune_cycles(p, horizon_s, rng);
  return sample_trace(cycles, p.p_hat_mw, p.sigma_eta_tail, p.sigma_eta_idle, horizon_s,
                      dt_s, seed, rng);
}

PowerTrace aggregate_ai_load(const WorkloadMix& mix, double horizon_s, double dt_s,
                             std::uint64_t seed) {
  if (!(horizon_s > 0.0) || !(dt_s > 0.0))
    throw ConfigError("aggregate_ai_load: horizon and dt must be positive");
  PowerTrace total;
  total.dt_s = dt_s;
  total.t0_s = 0.0;
  total.seed = seed;
  const auto n = static_cast<std::size_t>(std::floor(horizon_s / dt_s)) + 1;
  total.values_mw.assign(n, 0.0);

  std::uint64_t index = 0;
  auto add = [&](const PowerTrace& member) {
    for (std::size_t k = 0; k < n; ++k) total.values_mw[k] += member.values_mw[k];
    total.clamped_samples += member.clamped_samples;
  };
  {
    const std::uint64_t sub = mix_seed(seed, index++);
    total.sub_seeds.push_back(sub);
    add(generate_training_trace(mix.dominant, horizon_s, dt_s, sub));
  }
  for (const auto& w : mix.small_training) {
    const std::uint64_t sub = mix_seed(seed, index++);
    total.sub_seeds.push_back(sub);
    add(generate_training_trace(w, horizon_s, dt_s, sub));
  }
  for (const auto& w : mix.finetune) {
    const std::uint64_t sub = mix_seed(seed, index++);
    total.sub_seeds.push_back(sub);
    add(generate_finetune_trace(w, horizon_s, dt_s, sub));
  }
  return total;
}

TrainingParams training_params_from_json(const nlohmann::json& j) {
  TrainingParams p;
  p.f0_min_hz = j.value("f0_min_hz", p.f0_min_hz);
  p.f0_max_hz = j.value("f0_max_hz", p.f0_max_hz);
  p.sigma_xi = j.value("sigma_xi", p.sigma_xi);
  p.r_min = j.value("r_min", p.r_min);
  p.r_max = j.value("r_max", p.r_max);
  p.sigma_delta = j.value("sigma_delta", p.sigma_delta);
  p.mu_delta = j.value("mu_delta", p.mu_delta);
  p.sigma_eta_up = j.value("sigma_eta_up", p.sigma_eta_up);
  p.sigma_eta_down = j.value("sigma_eta_down", p.sigma_eta_down);
  p.p_hat_mw = j.value("p_hat_mw", p.p_hat_mw);
  p.validate();
  return p;
}

FinetuneParams finetune_params_from_json(const nlohmann::json& j) {
  FinetuneParams p;
  p.f1_min_hz = j.value("f1_min_hz", p.f1_min_hz);
  p.f1_max_hz = j.value("f1_max_hz", p.f1_max_hz);
  p.sigma_zeta = j.value("sigma_zeta", p.sigma_zeta);
  p.r_min = j.value("r_min", p.r_min);
  p.r_max = j.value("r_max", p.r_max);
  p.sigma_delta_ft = j.value("sigma_delta_ft", p.sigma_delta_ft);
  p.mu_delta_ft = j.value("mu_delta_ft", p.mu_delta_ft);
  p.sigma_eta_tail = j.value("sigma_eta_tail", p.sigma_eta_tail);
  p.sigma_eta_idle = j.value("sigma_eta_idle", p.sigma_eta_idle);
  p.p_hat_mw = j.value("p_hat_mw", p.p_hat_mw);
  p.validate();
  return p;
}

WorkloadMix mix_from_json(const nlohmann::json& j) {
  WorkloadMix mix;
  if (j.contains("dominant")) mix.dominant = training_params_from_json(j.at("dominant"));
  for (const auto& w : j.value("small_training", nlohmann::json::array()))
    mix.small_training.push_back(training_params_from_json(w));
  for (const auto& w : j.value("finetune", nlohmann::json::array()))
    mix.finetune.push_back(finetune_params_from_json(w));
  return mix;
}

nlohmann::json to_json(const TrainingParams& p) {
  return {{"f0_min_hz", p.f0_min_hz}, {"f0_max_hz", p.f0_max_hz},
          {"sigma_xi", p.sigma_xi},   {"r_min", p.r_min},
          {"r_max", p.r_max},         {"sigma_delta", p.sigma_delta},
          {"mu_delta", p.mu_delta},   {"sigma_eta_up", p.sigma_eta_up},
          {"sigma_eta_down", p.sigma_eta_down}, {"p_hat_mw", p.p_hat_mw}};
}

nlohmann::json to_json(const FinetuneParams& p) {
  return {{"f1_min_hz", p.f1_min_hz}, {"f1_max_hz", p.f1_max_hz},
          {"sigma_zeta", p.sigma_zeta}, {"r_min", p.r_min},
          {"r_max", p.r_max},           {"sigma_delta_ft", p.sigma_delta_ft},
          {"mu_delta_ft", p.mu_delta_ft}, {"sigma_eta_tail", p.sigma_eta_tail},
          {"sigma_eta_idle", p.sigma_eta_idle}, {"p_hat_mw", p.p_hat_mw}};
}

nlohmann::json to_json(const WorkloadMix& mix) {
  nlohmann::json j;
  j["dominant"] = to_json(mix.dominant);
  j["small_training"] = nlohmann::json::array();
  for (const auto& w : mix.small_training) j["small_training"].push_back(to_json(w));
  j["finetune"] = nlohmann::json::array();
  for (const auto& w : mix.finetune) j["finetune"].push_back(to_json(w));
  return j;
}

TraceStats trace_stats(const PowerTrace& trace) {
  if (trace.values_mw.empty()) throw ConfigError("trace_stats: empty trace");
  TraceStats s;
  double sum = 0.0;
  s.min_mw = trace.values_mw.front();
  s.max_mw = trace.values_mw.front();
  for (double v : trace.values_mw) {
    sum += v;
    s.min_mw = std::min(s.min_mw, v);
    s.max_mw = std::max(s.max_mw, v);
  }
  const auto n = static_cast<double>(trace.values_mw.size());
  s.mean_mw = sum / n;
  double ss = 0.0;
  for (double v : trace.values_mw) ss += (v - s.mean_mw) * (v - s.mean_mw);
  s.std_mw = std::sqrt(ss / n);

  if (s.std_mw > 0.0 && trace.values_mw.size() >= 2) {
    // Long traces are truncated to a power-of-two length: the FFT cost is
    // unbounded for prime lengths and the dominant-bin estimate does not
    // need the full window.
    std::vector<double> window = trace.values_mw;
    if (window.size() > 8192) {
      std::size_t n2 = 1;
      while (n2 * 2 <= window.size()) n2 *= 2;
      window.resize(n2);
    }
    const auto spec = modal::fft_spectrum(window, trace.dt_s, modal::Window::kRectangular);
    double best = -1.0;
    for (std::size_t k = 1; k < spec.amplitude.size(); ++k) {
      if (spec.amplitude[k] > best) {
        best = spec.amplitude[k];
        s.dominant_freq_hz = spec.freq_hz[k];
      }
    }
    s.dominant_freq_defined = best >= 0.0;
  }
  return s;
}

void save_trace_csv(const PowerTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path);
  out << "time_s,power_mw\n";
  out.precision(17);
  for (std::size_t k = 0; k < trace.size(); ++k)
    out << trace.time_at(k) << "," << trace.values_mw[k] << "\n";
}

void save_trace_json(const PowerTrace& trace, const std::string& path) {
  nlohmann::json j;
  j["dt_s"] = trace.dt_s;
  j["t0_s"] = trace.t0_s;
  j["seed"] = trace.seed;
  j["sub_seeds"] = trace.sub_seeds;
  j["clamped_samples"] = trace.clamped_samples;
  j["values_mw"] = trace.values_mw;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path);
  out << j.dump(2) << "\n";
}

PowerTrace load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("time_s,power_mw", 0) != 0)
    throw ConfigError("trace CSV: missing time_s,power_mw header in " + path);
  PowerTrace trace;
  std::vector<double> times;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double t = 0.0, p = 0.0;
    char comma = 0;
    if (!(row >> t >> comma >> p) || comma != ',')
      throw ConfigError("trace CSV: bad row '" + line + "'");
    times.push_back(t);
    trace.values_mw.push_back(p);
  }
  if (trace.values_mw.empty()) throw ConfigError("trace CSV: no samples in " + path);
  trace.t0_s = times.front();
  trace.dt_s = times.size() > 1 ? times[1] - times[0] : 1.0;
  return trace;
}

PowerTrace load_trace_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  PowerTrace trace;
  trace.dt_s = j.at("dt_s").get<double>();
  trace.t0_s = j.at("t0_s").get<double>();
  trace.seed = j.at("seed").get<std::uint64_t>();
  trace.sub_seeds = j.value("sub_seeds", std::vector<std::uint64_t>{});
  trace.clamped_samples = j.value("clamped_samples", std::int64_t{0});
  trace.values_mw = j.at("values_mw").get<std::vector<double>>();
  if (trace.values_mw.empty() || !(trace.dt_s > 0.0))
    throw ConfigError("trace JSON: invalid trace in " + path);
  return trace;
}

}  // namespace gridosc::workload
