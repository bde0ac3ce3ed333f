#pragma once

// Flux x detuning sweeps over a shared set of disorder realizations, the
// saturation curve, the full-vs-local comparison and run persistence.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "purcell/config.hpp"
#include "purcell/csv.hpp"
#include "purcell/dataset.hpp"
#include "purcell/disorder.hpp"
#include "purcell/dynamics.hpp"
#include "purcell/fit_models.hpp"
#include "purcell/parallel.hpp"
#include "purcell/rng.hpp"
#include "purcell/survival.hpp"

namespace purcell {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SweepPlan {
  ModelParams base;
  std::vector<double> flux_list;
  std::vector<double> detuning_grid;
  std::vector<Model> models{Model::full, Model::local};
  std::string run_id = "sweep";
  SimulationOptions simulation;
  double fit_window_start = 30.0;
  double survival_time = 150.0;
  int survival_bins = 20;
  std::optional<double> phi_0;
  bool write_traces = false;
  /// configuration the plan was built from, stored in the manifest
  ordered_json config_snapshot;

  [[nodiscard]] bool has_model(Model m) const { return std::find(models.begin(), models.end(), m) != models.end(); }

  void validate() const {
    base.validate();
    if (flux_list.empty()) throw std::invalid_argument("sweep plan: empty flux list");
    for (std::size_t i = 1; i < flux_list.size(); ++i)
      if (!(flux_list[i] > flux_list[i - 1])) throw std::invalid_argument("sweep plan: flux list must increase");
    if (detuning_grid.empty()) throw std::invalid_argument("sweep plan: empty detuning grid");
    for (std::size_t i = 1; i < detuning_grid.size(); ++i)
      if (!(detuning_grid[i] > detuning_grid[i - 1]))
        throw std::invalid_argument("sweep plan: detuning grid must increase");
    if (models.empty()) throw std::invalid_argument("sweep plan: no models");
  }
};

inline SweepPlan make_plan(const RunConfig& config) {
  SweepPlan p;
  p.base = config.model;
  p.flux_list = config.sweep.flux_list;
  p.detuning_grid = config.sweep.detuning_grid();
  p.models = config.sweep.models;
  p.run_id = config.sweep.run_id;
  p.simulation = config.simulation;
  p.fit_window_start = config.fit_window_start;
  p.survival_time = config.survival.time;
  p.survival_bins = config.survival.n_bins;
  p.phi_0 = config.sweep.phi_0;
  p.write_traces = config.sweep.write_traces;
  p.config_snapshot = to_json(config);
  return p;
}

/// Hex digest of the realization seeds; equal digests mean equal ensembles.
inline std::string seed_digest(std::span<const DisorderRealization> realizations) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (const auto& r : realizations) h = splitmix64(h ^ r.realization_seed);
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

// ---- single grid point -----------------------------------------------------

struct PointOptions {
  SimulationOptions simulation;
  double fit_window_start = 30.0;
  double survival_time = 150.0;
  unsigned threads = 1;
};

/// Outcome of one model at one (flux, detuning) point.
struct ModelOutcome {
  Model model = Model::full;
  FluorescenceTrace trace;
  FitResult fit;
  bool fit_ok = false;
  double gamma = kNaN;
  /// s_z per [realization][ion] at the pulse end and at the survival time
  std::vector<std::vector<double>> s_z_initial;
  std::vector<std::vector<double>> s_z_later;
  double max_bloch_radius_sq = 0.0;
  /// largest increase of the total excitation between consecutive decay samples
  double max_energy_increase = 0.0;
};

struct PointOutcome {
  double flux = 0.0;
  double detuning = 0.0;
  std::string seed_digest;
  /// max Bloch radius^2 during the drive phase
  double pulse_max_bloch_radius_sq = 0.0;
  /// every model's decay started from the identical pulse-end state
  bool shared_initial_state = true;
  std::vector<ModelOutcome> models;

  [[nodiscard]] const ModelOutcome& outcome(Model m) const {
    for (const auto& o : models)
      if (o.model == m) return o;
    throw std::out_of_range(std::string("point has no ") + to_string(m) + " model outcome");
  }
};

namespace detail {

struct DecaySample {
  std::vector<double> flux;
  std::vector<double> s_z_initial, s_z_later;
  double max_bloch = 0.0;
  double max_energy_increase = 0.0;
};

struct RealizationSample {
  std::vector<DecaySample> decays;
  double pulse_max_bloch = 0.0;
  bool shared_initial_state = true;
};

inline RealizationSample simulate_realization(const DisorderRealization& realization, const ModelParams& params,
                                              std::span<const Model> models, const PointOptions& opts) {
  RealizationSample out;
  const std::size_t n = realization.size();
  SystemState pulse_end = SystemState::ground(n);
  if (params.t_pulse > 0.0) {
    const auto pulse_grid = uniform_grid(params.t_pulse, 1.0);
    evolve(Model::full, pulse_end, realization, params, params.t_pulse, true, pulse_grid,
           [&](double, const StateView& v) { out.pulse_max_bloch = std::max(out.pulse_max_bloch, v.max_bloch_radius_sq()); },
           opts.simulation.integrator);
  }
  const auto grid = uniform_grid(params.t_decay, opts.simulation.samples_per_unit);
  const auto rates = gamma_eff_rates(realization, params);
  for (const Model model : models) {
    DecaySample d;
    d.flux.reserve(grid.size());
    d.s_z_initial.resize(n);
    d.s_z_later.resize(n);
    SystemState state = pulse_end;
    if (!(state == pulse_end)) out.shared_initial_state = false;
    for (std::size_t j = 0; j < n; ++j) d.s_z_initial[j] = state.s_z(j);
    double prev_t = 0.0, prev_energy = state.excitation();
    std::vector<double> prev_s_z = d.s_z_initial;
    bool later_done = opts.survival_time <= 0.0;
    if (later_done) d.s_z_later = d.s_z_initial;
    evolve(
        model, state, realization, params, params.t_decay, false, grid,
        [&](double t, const StateView& v) {
          d.flux.push_back(model == Model::full ? params.kappa_c * std::norm(v.a()) : local_flux(v, rates, params));
          d.max_bloch = std::max(d.max_bloch, v.max_bloch_radius_sq());
          const double e = v.excitation();
          if (model == Model::full && t > 0.0) d.max_energy_increase = std::max(d.max_energy_increase, e - prev_energy);
          if (!later_done && t >= opts.survival_time - 1e-12) {
            const double w = t > prev_t ? (opts.survival_time - prev_t) / (t - prev_t) : 1.0;
            for (std::size_t j = 0; j < n; ++j) d.s_z_later[j] = (1.0 - w) * prev_s_z[j] + w * v.s_z(j);
            later_done = true;
          }
          for (std::size_t j = 0; j < n; ++j) prev_s_z[j] = v.s_z(j);
          prev_t = t;
          prev_energy = e;
        },
        opts.simulation.integrator);
    out.decays.push_back(std::move(d));
  }
  return out;
}

inline FitResult flagged_fit(std::string model, std::string message) {
  FitResult r;
  r.model = std::move(model);
  r.message = std::move(message);
  r.converged = false;
  return r;
}

}  // namespace detail

/// Pulse + decay for every realization at one (flux, detuning), disorder
/// averaging in realization order and an exponential fit of each model's
/// trace on [fit_window_start, t_decay]. Both models decay from the same
/// full-model pulse-end state. Fit failures are flagged, not thrown.
inline PointOutcome run_point(const ModelParams& params, double flux, double detuning, std::span<const Model> models,
                              std::span<const DisorderRealization> realizations, const PointOptions& opts = {}) {
  if (realizations.empty()) throw std::invalid_argument("run_point: no realizations");
  ModelParams p = params;
  p.set_flux(flux);
  p.delta_c = detuning;

  std::vector<detail::RealizationSample> samples(realizations.size());
  parallel_for(realizations.size(), opts.threads,
               [&](std::size_t k) { samples[k] = detail::simulate_realization(realizations[k], p, models, opts); });

  PointOutcome out;
  out.flux = flux;
  out.detuning = detuning;
  out.seed_digest = seed_digest(realizations);
  const auto grid = uniform_grid(p.t_decay, opts.simulation.samples_per_unit);
  for (std::size_t m = 0; m < models.size(); ++m) {
    ModelOutcome o;
    o.model = models[m];
    o.trace.times = grid;
    o.trace.flux.assign(grid.size(), 0.0);
    o.trace.n_traj = static_cast<int>(realizations.size());
    for (const auto& s : samples) {
      const auto& d = s.decays[m];
      for (std::size_t i = 0; i < grid.size(); ++i) o.trace.flux[i] += d.flux[i];
      o.s_z_initial.push_back(d.s_z_initial);
      o.s_z_later.push_back(d.s_z_later);
      o.max_bloch_radius_sq = std::max(o.max_bloch_radius_sq, d.max_bloch);
      o.max_energy_increase = std::max(o.max_energy_increase, d.max_energy_increase);
    }
    for (auto& f : o.trace.flux) f /= static_cast<double>(realizations.size());
    try {
      o.fit = fit_exponential(o.trace, opts.fit_window_start, p.t_decay);
      o.fit_ok = o.fit.ok() && o.fit.parameters[1] > 0.0;
    } catch (const std::exception& e) {
      o.fit = detail::flagged_fit("exponential", e.what());
      o.fit.window = std::pair{opts.fit_window_start, p.t_decay};
      o.fit_ok = false;
    }
    o.gamma = o.fit.parameters.empty() ? kNaN : o.fit.parameters[1];
    out.models.push_back(std::move(o));
  }
  for (const auto& s : samples) {
    out.pulse_max_bloch_radius_sq = std::max(out.pulse_max_bloch_radius_sq, s.pulse_max_bloch);
    out.shared_initial_state = out.shared_initial_state && s.shared_initial_state;
  }
  return out;
}

// ---- sweep -----------------------------------------------------------------

struct SweepRecord {
  double flux = 0.0;
  double detuning = 0.0;
  Model model = Model::full;
  double gamma = kNaN;
  bool fit_ok = false;
  FitResult fit;
  std::string seed_digest;
  double max_bloch_radius_sq = 0.0;
  double max_energy_increase = 0.0;
};

/// Per-(flux, model) analysis of the Gamma(Delta_c) curve.
struct FluxRow {
  double flux = 0.0;
  Model model = Model::full;
  std::vector<double> detunings;  ///< grid points with a usable fit
  std::vector<double> gammas;
  FitResult lorentzian;
  FitResult double_lorentzian;
  double max_gamma = kNaN;
  std::optional<double> resonant_gamma;
  /// detunings of the interior local maxima of the sampled curve
  std::vector<double> local_maxima;
};

struct SaturationPoint {
  double flux = 0.0;
  double integrated = 0.0;
};

struct SaturationResult {
  std::vector<SaturationPoint> points;
  FitResult fit;
  std::optional<double> phi_0;
};

struct ComparisonRow {
  double flux = 0.0;
  double flux_over_phi0 = kNaN;
  Model model = Model::full;
  double normalized_max_gamma = kNaN;
  double splitting = kNaN;
  double offset_b = kNaN;
};

struct SurvivalEntry {
  double flux = 0.0;
  Model model = Model::full;
  SurvivalHistogram histogram;
};

struct SweepResult {
  SweepPlan plan;
  std::vector<DisorderRealization> realizations;
  std::vector<SweepRecord> records;
  std::vector<FluxRow> flux_rows;
  std::vector<FluorescenceTrace> traces;  ///< parallel to records, kept only when requested
  std::vector<SurvivalEntry> survival;
  /// full-model pulse-end states at the resonant point, per flux and realization
  std::vector<std::vector<std::vector<double>>> resonant_s_z;
  SaturationResult saturation;
  std::vector<ComparisonRow> comparison;
  bool complete = false;
  double wall_time_seconds = 0.0;
  std::string code_version = kVersion;

  [[nodiscard]] std::vector<const SweepRecord*> select(double flux, Model m) const {
    std::vector<const SweepRecord*> out;
    for (const auto& r : records)
      if (r.flux == flux && r.model == m) out.push_back(&r);
    return out;
  }
};

/// Integrates a trace with the trapezoidal rule over [t_lo, t_hi].
inline double integrate_trace(const FluorescenceTrace& trace, double t_lo, double t_hi) {
  double total = 0.0;
  for (std::size_t i = 1; i < trace.times.size(); ++i) {
    const double a = std::max(trace.times[i - 1], t_lo), b = std::min(trace.times[i], t_hi);
    if (b <= a) continue;
    const double span = trace.times[i] - trace.times[i - 1];
    auto at = [&](double t) { return trace.flux[i - 1] + (trace.flux[i] - trace.flux[i - 1]) * (t - trace.times[i - 1]) / span; };
    total += 0.5 * (at(a) + at(b)) * (b - a);
  }
  return total;
}

inline SaturationResult fit_saturation(std::vector<SaturationPoint> points) {
  SaturationResult s;
  s.points = std::move(points);
  std::vector<double> phi, intensity;
  for (const auto& p : s.points) {
    phi.push_back(p.flux);
    intensity.push_back(p.integrated);
  }
  try {
    s.fit = fit_ple_saturation(phi, intensity);
    if (s.fit.ok()) s.phi_0 = s.fit.derived.at("phi_0");
  } catch (const std::exception& e) {
    s.fit = detail::flagged_fit("ple", e.what());
  }
  return s;
}

/// Local maxima of the sampled curve strictly inside the grid.
inline std::vector<double> interior_maxima(std::span<const double> x, std::span<const double> y) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < y.size(); ++i)
    if (y[i] > y[i - 1] && y[i] > y[i + 1]) out.push_back(x[i]);
  return out;
}

inline FluxRow analyze_flux_row(double flux, Model model, std::span<const SweepRecord* const> records) {
  FluxRow row;
  row.flux = flux;
  row.model = model;
  for (const auto* r : records) {
    if (!r->fit_ok) continue;
    row.detunings.push_back(r->detuning);
    row.gammas.push_back(r->gamma);
    if (r->detuning == 0.0) row.resonant_gamma = r->gamma;
  }
  if (!row.gammas.empty()) row.max_gamma = *std::max_element(row.gammas.begin(), row.gammas.end());
  row.local_maxima = interior_maxima(row.detunings, row.gammas);
  auto guarded = [&](auto&& fit, const char* name) {
    try {
      return fit(std::span<const double>(row.detunings), std::span<const double>(row.gammas));
    } catch (const std::exception& e) {
      return detail::flagged_fit(name, e.what());
    }
  };
  row.lorentzian = guarded([](auto x, auto y) { return fit_lorentzian_single(x, y); }, "lorentzian");
  row.double_lorentzian = guarded([](auto x, auto y) { return fit_double_lorentzian(x, y); }, "double_lorentzian");
  return row;
}

/// Model comparison table. Per model, max Gamma over Delta_c normalized by
/// the smallest-flux maximum, with splitting and offset from the double
/// Lorentzian fits, against flux / phi_0.
inline std::vector<ComparisonRow> compare_models(const std::vector<FluxRow>& rows, std::optional<double> phi_0) {
  std::vector<ComparisonRow> out;
  std::map<Model, double> reference;
  for (const auto& r : rows)
    if (!reference.contains(r.model)) reference[r.model] = r.max_gamma;
  for (const auto& r : rows) {
    ComparisonRow c;
    c.flux = r.flux;
    c.model = r.model;
    c.flux_over_phi0 = phi_0 ? r.flux / *phi_0 : kNaN;
    c.normalized_max_gamma = r.max_gamma / reference[r.model];
    if (!r.double_lorentzian.parameters.empty()) {
      c.splitting = r.double_lorentzian.derived.at("splitting");
      c.offset_b = r.double_lorentzian.parameters[5];
    }
    out.push_back(c);
  }
  return out;
}

inline std::vector<ComparisonRow> compare_models(const SweepResult& result) {
  const auto phi_0 = result.plan.phi_0 ? result.plan.phi_0 : result.saturation.phi_0;
  return compare_models(result.flux_rows, phi_0);
}

using RowCallback = std::function<void(const SweepResult& partial, std::size_t flux_index)>;

/// Evaluates every (flux, detuning, model) point on one shared realization
/// set, then fits each Gamma(Delta_c) curve. `on_row` runs after each flux.
inline SweepResult run_detuning_sweep(const SweepPlan& plan, unsigned threads = 1, const RowCallback& on_row = {}) {
  plan.validate();
  const auto start = std::chrono::steady_clock::now();
  SweepResult result;
  result.plan = plan;
  result.realizations = sample_ensemble(plan.base);
  PointOptions opts{plan.simulation, plan.fit_window_start, plan.survival_time, threads};

  std::vector<SaturationPoint> saturation;
  for (std::size_t fi = 0; fi < plan.flux_list.size(); ++fi) {
    const double flux = plan.flux_list[fi];
    for (const double detuning : plan.detuning_grid) {
      PointOutcome point = run_point(plan.base, flux, detuning, plan.models, result.realizations, opts);
      for (auto& o : point.models) {
        SweepRecord rec;
        rec.flux = flux;
        rec.detuning = detuning;
        rec.model = o.model;
        rec.gamma = o.gamma;
        rec.fit_ok = o.fit_ok;
        rec.fit = o.fit;
        rec.seed_digest = point.seed_digest;
        rec.max_bloch_radius_sq = std::max(o.max_bloch_radius_sq, point.pulse_max_bloch_radius_sq);
        rec.max_energy_increase = o.max_energy_increase;
        result.records.push_back(rec);
        if (plan.write_traces) result.traces.push_back(o.trace);
        if (detuning == 0.0) {
          BinningOptions bins{plan.survival_bins, 0.0, 0.0};
          result.survival.push_back({flux, o.model,
                                     bin_survival(result.realizations, o.s_z_initial, o.s_z_later, plan.survival_time,
                                                  bins, plan.base.delta_inh)});
          if (o.model == plan.models.front()) {
            result.resonant_s_z.push_back(o.s_z_initial);
            if (o.model == Model::full)
              saturation.push_back({flux, integrate_trace(o.trace, plan.fit_window_start, plan.base.t_decay)});
          }
        }
      }
    }
    for (const Model m : plan.models) {
      const auto recs = result.select(flux, m);
      result.flux_rows.push_back(analyze_flux_row(flux, m, recs));
    }
    result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_row) on_row(result, fi);
  }
  result.saturation = fit_saturation(std::move(saturation));
  result.comparison = compare_models(result);
  result.complete = true;
  result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Resonant saturation curve: total fluorescence in the fit window per flux,
/// fitted with the PLE function.
inline SaturationResult run_saturation_curve(const ModelParams& params, std::span<const double> flux_grid,
                                             const PointOptions& opts = {},
                                             std::vector<FluorescenceTrace>* traces = nullptr) {
  const auto realizations = sample_ensemble(params);
  const Model full[] = {Model::full};
  std::vector<SaturationPoint> points;
  for (const double flux : flux_grid) {
    auto point = run_point(params, flux, 0.0, full, realizations, opts);
    const auto& trace = point.models.front().trace;
    points.push_back({flux, integrate_trace(trace, opts.fit_window_start, params.t_decay)});
    if (traces) traces->push_back(trace);
  }
  return fit_saturation(std::move(points));
}

// ---- persistence -----------------------------------------------------------

/// Writes `content` to `path` through a temporary file and a rename. Readers
/// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string trace_csv(const FluorescenceTrace& trace) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"time", "flux"});
  for (std::size_t i = 0; i < trace.times.size(); ++i) w.row(trace.times[i], trace.flux[i]);
  return ss.str();
}

inline std::string fig3b_csv(const SweepResult& r) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"flux", "detuning", "model", "gamma_over_kappa", "fit_ok"});
  for (const auto& rec : r.records)
    w.row(rec.flux, rec.detuning, to_string(rec.model), rec.gamma / r.plan.base.kappa, rec.fit_ok ? 1 : 0);
  return ss.str();
}

inline std::string fig4b_csv(const SweepResult& r) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"flux_over_phi0", "model", "normalized_max_gamma", "splitting", "offset_b"});
  for (const auto& c : r.comparison) w.row(c.flux_over_phi0, to_string(c.model), c.normalized_max_gamma, c.splitting, c.offset_b);
  return ss.str();
}

inline std::string flux_fits_csv(const SweepResult& r) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"flux", "model", "max_gamma", "lorentzian_fwhm", "lorentzian_ok", "a", "delta_plus", "h_plus",
            "delta_minus", "h_minus", "b", "splitting", "double_ok", "n_local_maxima"});
  for (const auto& row : r.flux_rows) {
    const auto& L = row.lorentzian;
    const auto& D = row.double_lorentzian;
    const double fwhm = L.derived.contains("fwhm") ? L.derived.at("fwhm") : kNaN;
    auto dp = [&](std::size_t i) { return i < D.parameters.size() ? D.parameters[i] : kNaN; };
    const double split = D.derived.contains("splitting") ? D.derived.at("splitting") : kNaN;
    w.row(row.flux, to_string(row.model), row.max_gamma, fwhm, L.ok() ? 1 : 0, dp(0), dp(1), dp(2), dp(3), dp(4), dp(5),
          split, D.ok() ? 1 : 0, row.local_maxima.size());
  }
  return ss.str();
}

inline std::string saturation_csv(const SaturationResult& s) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"flux", "integrated_fluorescence"});
  for (const auto& p : s.points) w.row(p.flux, p.integrated);
  return ss.str();
}

inline std::string survival_csv(const std::vector<SurvivalEntry>& entries) {
  std::ostringstream ss;
  CsvWriter w(ss);
  w.header({"flux", "model", "time", "bin_lo", "bin_hi", "count", "mean_initial", "mean_excitation",
            "std_excitation", "fractional_survival", "survival_stderr"});
  auto v = [](const std::optional<double>& o) { return o.value_or(kNaN); };
  for (const auto& e : entries) {
    const auto& h = e.histogram;
    for (std::size_t b = 0; b < h.n_bins(); ++b)
      w.row(e.flux, to_string(e.model), h.time, h.bin_edges[b], h.bin_edges[b + 1], h.counts[b], v(h.mean_initial[b]),
            v(h.mean_excitation[b]), v(h.std_excitation[b]), v(h.fractional_survival[b]), v(h.survival_stderr[b]));
  }
  return ss.str();
}

inline std::string trace_file_name(const SweepRecord& rec, std::size_t index) {
  std::ostringstream ss;
  ss << "traces/point_" << std::setw(4) << std::setfill('0') << index << '_' << to_string(rec.model) << ".csv";
  return ss.str();
}

inline ordered_json manifest_json(const SweepResult& r) {
  ordered_json m;
  m["schema_version"] = kManifestSchemaVersion;
  m["run_id"] = r.plan.run_id;
  m["code_version"] = r.code_version;
  m["complete"] = r.complete;
  m["wall_time_seconds"] = r.wall_time_seconds;
  m["config"] = r.plan.config_snapshot;
  m["parameters"] = to_json(r.plan.base);
  ordered_json seeds;
  seeds["master_seed"] = r.plan.base.master_seed;
  auto per = ordered_json::array();
  for (const auto& real : r.realizations) per.push_back(real.realization_seed);
  seeds["realization_seeds"] = std::move(per);
  seeds["digest"] = seed_digest(r.realizations);
  m["seeds"] = std::move(seeds);
  m["flux_list"] = r.plan.flux_list;
  m["detuning_grid"] = r.plan.detuning_grid;
  m["models"] = models_to_json(r.plan.models);
  auto points = ordered_json::array();
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    ordered_json p;
    p["flux"] = rec.flux;
    p["detuning"] = rec.detuning;
    p["model"] = to_string(rec.model);
    p["gamma"] = std::isfinite(rec.gamma) ? ordered_json(rec.gamma) : ordered_json(nullptr);
    p["fit_ok"] = rec.fit_ok;
    p["seed_digest"] = rec.seed_digest;
    p["max_bloch_radius_sq"] = rec.max_bloch_radius_sq;
    p["max_energy_increase"] = rec.max_energy_increase;
    p["fit"] = to_json(rec.fit);
    if (r.plan.write_traces) p["trace_file"] = trace_file_name(rec, i);
    points.push_back(std::move(p));
  }
  m["points"] = std::move(points);
  auto rows = ordered_json::array();
  for (const auto& row : r.flux_rows) {
    ordered_json j;
    j["flux"] = row.flux;
    j["model"] = to_string(row.model);
    j["lorentzian"] = to_json(row.lorentzian);
    j["double_lorentzian"] = to_json(row.double_lorentzian);
    j["local_maxima"] = row.local_maxima;
    rows.push_back(std::move(j));
  }
  m["flux_fits"] = std::move(rows);
  if (r.complete) {
    m["saturation"] = to_json(r.saturation.fit);
    const auto phi_0 = r.plan.phi_0 ? r.plan.phi_0 : r.saturation.phi_0;
    m["phi_0"] = phi_0 ? ordered_json(*phi_0) : ordered_json(nullptr);
  }
  auto files = ordered_json::array({"fig3b.csv", "flux_fits.csv"});
  if (r.complete) {
    files.push_back("fig4b.csv");
    files.push_back("saturation.csv");
    files.push_back("survival.csv");
  }
  m["files"] = std::move(files);
  return m;
}

/// Writes the figure tables, then the manifest. A manifest only references
/// tables already on disk.
inline ordered_json persist_run(const SweepResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "fig3b.csv", fig3b_csv(r));
  write_file_atomic(dir / "flux_fits.csv", flux_fits_csv(r));
  if (r.complete) {
    write_file_atomic(dir / "fig4b.csv", fig4b_csv(r));
    write_file_atomic(dir / "saturation.csv", saturation_csv(r.saturation));
    write_file_atomic(dir / "survival.csv", survival_csv(r.survival));
  }
  if (r.plan.write_traces) {
    std::filesystem::create_directories(dir / "traces", ec);
    for (std::size_t i = 0; i < r.records.size() && i < r.traces.size(); ++i)
      write_file_atomic(dir / trace_file_name(r.records[i], i), trace_csv(r.traces[i]));
  }
  auto manifest = manifest_json(r);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

/// Configuration stored in a manifest, ready to re-run the identical sweep.
inline RunConfig config_from_manifest(const std::filesystem::path& manifest_path) {
  const auto text = read_text_file(manifest_path.string());
  ordered_json m;
  try {
    m = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (!m.contains("schema_version") || m["schema_version"] != kManifestSchemaVersion)
    throw ConfigError(manifest_path.string() + ": unsupported manifest schema");
  if (!m.contains("config")) throw ConfigError(manifest_path.string() + ": manifest has no config section");
  ordered_json merged = to_json(RunConfig{});
  detail::merge_checked(merged, m["config"], "", manifest_path.string(), text);
  return config_from_json(merged);
}

/// Checks the structural schema of a manifest document; returns the list of
/// problems (empty when valid).
inline std::vector<std::string> validate_manifest(const ordered_json& m) {
  std::vector<std::string> problems;
  auto need = [&](const char* key, auto pred, const char* what) {
    if (!m.contains(key))
      problems.push_back(std::string("missing key '") + key + "'");
    else if (!pred(m[key]))
      problems.push_back(std::string("key '") + key + "' must be " + what);
  };
  auto is_int = [](const ordered_json& j) { return j.is_number_integer(); };
  auto is_str = [](const ordered_json& j) { return j.is_string(); };
  auto is_bool = [](const ordered_json& j) { return j.is_boolean(); };
  auto is_obj = [](const ordered_json& j) { return j.is_object(); };
  auto is_arr = [](const ordered_json& j) { return j.is_array(); };
  auto is_num = [](const ordered_json& j) { return j.is_number(); };
  need("schema_version", is_int, "an integer");
  need("run_id", is_str, "a string");
  need("code_version", is_str, "a string");
  need("complete", is_bool, "a boolean");
  need("wall_time_seconds", is_num, "a number");
  need("config", is_obj, "an object");
  need("parameters", is_obj, "an object");
  need("seeds", is_obj, "an object");
  need("flux_list", is_arr, "an array");
  need("detuning_grid", is_arr, "an array");
  need("models", is_arr, "an array");
  need("points", is_arr, "an array");
  need("files", is_arr, "an array");
  if (m.contains("seeds") && m["seeds"].is_object()) {
    const auto& s = m["seeds"];
    if (!s.contains("master_seed") || !s["master_seed"].is_number_unsigned()) problems.push_back("seeds.master_seed");
    if (!s.contains("realization_seeds") || !s["realization_seeds"].is_array())
      problems.push_back("seeds.realization_seeds");
    if (!s.contains("digest") || !s["digest"].is_string()) problems.push_back("seeds.digest");
  }
  if (m.contains("points") && m["points"].is_array()) {
    for (std::size_t i = 0; i < m["points"].size(); ++i) {
      const auto& p = m["points"][i];
      for (const char* k : {"flux", "detuning", "model", "gamma", "fit_ok", "seed_digest", "fit"})
        if (!p.contains(k)) problems.push_back("points[" + std::to_string(i) + "]." + k);
    }
  }
  return problems;
}

}  // namespace purcell
