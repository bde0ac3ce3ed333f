#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "purcell/integrator.hpp"
#include "purcell/params.hpp"
#include "purcell/state.hpp"

namespace purcell {

enum class Model { full, local };

inline const char* to_string(Model m) { return m == Model::full ? "full" : "local"; }

inline Model model_from_string(const std::string& name) {
  if (name == "full") return Model::full;
  if (name == "local") return Model::local;
  throw std::invalid_argument("unknown model '" + name + "' (valid: full, local)");
}

struct SimulationOptions {
  IntegratorOptions integrator{};
  double samples_per_unit = 2.0;  ///< fluorescence samples per 1/kappa
};

/// Purcell-enhanced single-ion decay rate gamma + kappa g^2 / ((Delta_c - delta)^2 + kappa^2/4).
inline double gamma_eff(const IonParams& ion, const ModelParams& params) {
  const double dd = params.delta_c - ion.delta;
  return params.gamma + params.kappa * ion.g * ion.g / (dd * dd + 0.25 * params.kappa * params.kappa);
}

namespace detail {

inline void check_dimensions(std::size_t flat_size, std::size_t n_ions) {
  if (flat_size != 2 + 3 * n_ions)
    throw std::invalid_argument("state dimension does not match the realization size");
}

}  // namespace detail

/// Mean-field Tavis-Cummings equations of motion on the flat state layout.
class FullRhs {
 public:
  FullRhs(const DisorderRealization& realization, const ModelParams& params, bool drive_on)
      : n_(realization.size()),
        delta_(n_),
        g_(n_),
        kappa_half_(0.5 * params.kappa),
        gamma_(params.gamma),
        delta_c_(params.delta_c),
        drive_(drive_on ? std::sqrt(params.kappa_c) * params.beta_in : 0.0) {
    for (std::size_t j = 0; j < n_; ++j) {
      delta_[j] = realization.ions[j].delta;
      g_[j] = realization.ions[j].g;
    }
  }

  [[nodiscard]] std::size_t dimension() const noexcept { return 2 + 3 * n_; }

  void operator()(double /*t*/, const double* y, double* dy) const noexcept {
    const std::size_t n = n_;
    const double ar = y[0], ai = y[1];
    const double* sr = y + 2;
    const double* si = y + 2 + n;
    const double* sz = y + 2 + 2 * n;
    double* dsr = dy + 2;
    double* dsi = dy + 2 + n;
    double* dsz = dy + 2 + 2 * n;
    const double* d = delta_.data();
    const double* g = g_.data();
    const double hg = 0.5 * gamma_;

    double sum_r = 0.0, sum_i = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sum_r += g[j] * sr[j];
      sum_i += g[j] * si[j];
      dsr[j] = d[j] * si[j] - hg * sr[j] - g[j] * sz[j] * ai;
      dsi[j] = -d[j] * sr[j] - hg * si[j] + g[j] * sz[j] * ar;
      dsz[j] = -4.0 * g[j] * (ar * si[j] - ai * sr[j]) - gamma_ * (1.0 + sz[j]);
    }
    dy[0] = delta_c_ * ai - kappa_half_ * ar + sum_i - drive_;
    dy[1] = -delta_c_ * ar - kappa_half_ * ai - sum_r;
  }

 private:
  std::size_t n_;
  std::vector<double> delta_, g_;
  double kappa_half_, gamma_, delta_c_, drive_;
};

/// Effective local model: free cavity decay, each spin Rabi-driven by the
/// cavity amplitude and relaxing with its own Purcell rate gamma_eff.
class LocalRhs {
 public:
  LocalRhs(const DisorderRealization& realization, const ModelParams& params)
      : n_(realization.size()),
        delta_(n_),
        g_(n_),
        gamma_eff_(n_),
        kappa_half_(0.5 * params.kappa),
        delta_c_(params.delta_c) {
    for (std::size_t j = 0; j < n_; ++j) {
      delta_[j] = realization.ions[j].delta;
      g_[j] = realization.ions[j].g;
      gamma_eff_[j] = gamma_eff(realization.ions[j], params);
    }
  }

  [[nodiscard]] std::size_t dimension() const noexcept { return 2 + 3 * n_; }
  [[nodiscard]] std::span<const double> rates() const noexcept { return gamma_eff_; }

  void operator()(double /*t*/, const double* y, double* dy) const noexcept {
    const std::size_t n = n_;
    const double ar = y[0], ai = y[1];
    const double* sr = y + 2;
    const double* si = y + 2 + n;
    const double* sz = y + 2 + 2 * n;
    double* dsr = dy + 2;
    double* dsi = dy + 2 + n;
    double* dsz = dy + 2 + 2 * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double ge = gamma_eff_[j];
      dsr[j] = delta_[j] * si[j] - 0.5 * ge * sr[j] - g_[j] * sz[j] * ai;
      dsi[j] = -delta_[j] * sr[j] - 0.5 * ge * si[j] + g_[j] * sz[j] * ar;
      dsz[j] = -4.0 * g_[j] * (ar * si[j] - ai * sr[j]) - ge * (1.0 + sz[j]);
    }
    dy[0] = delta_c_ * ai - kappa_half_ * ar;
    dy[1] = -delta_c_ * ar - kappa_half_ * ai;
  }

 private:
  std::size_t n_;
  std::vector<double> delta_, g_, gamma_eff_;
  double kappa_half_, delta_c_;
};

inline SystemState rhs_full(const SystemState& state, const DisorderRealization& realization,
                            const ModelParams& params, bool drive_on) {
  detail::check_dimensions(state.dimension(), realization.size());
  SystemState out = state;
  FullRhs(realization, params, drive_on)(0.0, state.flat().data(), out.flat().data());
  return out;
}

inline SystemState rhs_local(const SystemState& state, const DisorderRealization& realization,
                             const ModelParams& params) {
  detail::check_dimensions(state.dimension(), realization.size());
  SystemState out = state;
  LocalRhs(realization, params)(0.0, state.flat().data(), out.flat().data());
  return out;
}

/// Uniform grid 0, dt, 2dt, ... up to and including `duration`.
inline std::vector<double> uniform_grid(double duration, double samples_per_unit) {
  if (!(samples_per_unit > 0.0)) throw std::invalid_argument("samples_per_unit must be positive");
  const auto count = static_cast<std::size_t>(std::floor(duration * samples_per_unit + 1e-9));
  std::vector<double> grid(count + 1);
  for (std::size_t i = 0; i <= count; ++i) grid[i] = static_cast<double>(i) / samples_per_unit;
  if (grid.back() < duration - 1e-12) grid.push_back(duration);
  return grid;
}

/// Streams the state of one integration phase to `observe(t, StateView)` on
/// `sample_grid` (times relative to the phase start).
template <typename Observer>
IntegrationStats evolve(Model model, SystemState& state, const DisorderRealization& realization,
                        const ModelParams& params, double duration, bool drive_on,
                        std::span<const double> sample_grid, Observer&& observe,
                        const IntegratorOptions& opts = {}) {
  detail::check_dimensions(state.dimension(), realization.size());
  auto forward = [&](double t, std::span<const double> y) { observe(t, StateView(y)); };
  if (model == Model::full) {
    return integrate_dense(FullRhs(realization, params, drive_on), 0.0, duration, state.flat(), sample_grid,
                           forward, opts);
  }
  if (drive_on) throw std::invalid_argument("the local model is defined for the drive-off phase only");
  return integrate_dense(LocalRhs(realization, params), 0.0, duration, state.flat(), sample_grid, forward,
                         opts);
}

/// Integrates over [0, duration] and records the state on `sample_grid`.
inline Trajectory integrate(const SystemState& initial, const DisorderRealization& realization,
                            const ModelParams& params, double duration, bool drive_on,
                            std::span<const double> sample_grid, const IntegratorOptions& opts = {},
                            Model model = Model::full) {
  if (!(duration > 0.0)) throw std::invalid_argument("integrate: time span must be positive");
  Trajectory traj;
  traj.drive_on = drive_on;
  traj.times.reserve(sample_grid.size());
  traj.states.reserve(sample_grid.size());
  SystemState state = initial;
  evolve(
      model, state, realization, params, duration, drive_on, sample_grid,
      [&](double t, const StateView& view) {
        traj.times.push_back(t);
        traj.states.push_back(SystemState::from_flat(view.flat));
      },
      opts);
  return traj;
}

/// Excitation pulse: vacuum cavity and ground-state ions, drive on for t_pulse.
inline SystemState run_pulse(const DisorderRealization& realization, const ModelParams& params,
                             const IntegratorOptions& opts = {}) {
  SystemState state = SystemState::ground(realization.size());
  if (params.t_pulse > 0.0) {
    integrate_to(FullRhs(realization, params, true), 0.0, params.t_pulse, state.flat(), opts);
  }
  return state;
}

/// Drive-off evolution for t_decay, sampled on the uniform fluorescence grid.
inline Trajectory run_decay(const DisorderRealization& realization, const SystemState& state_at_pulse_end,
                            const ModelParams& params, const SimulationOptions& opts = {},
                            Model model = Model::full) {
  const auto grid = uniform_grid(params.t_decay, opts.samples_per_unit);
  return integrate(state_at_pulse_end, realization, params, params.t_decay, false, grid, opts.integrator,
                   model);
}

/// Photon flux |sqrt(kappa_c) a + beta_in|^2 at the output port.
inline double output_flux(complex a, const ModelParams& params, bool drive_on) {
  return std::norm(std::sqrt(params.kappa_c) * a + (drive_on ? params.beta_in : 0.0));
}

inline double output_flux(const SystemState& state, const ModelParams& params, bool drive_on) {
  return output_flux(state.a(), params, drive_on);
}

/// Local-model emission rate kappa_c |a|^2 + sum_j gamma_eff_j (1 + s_z^j) / 2.
inline double local_flux(const StateView& state, std::span<const double> rates, const ModelParams& params) {
  double f = params.kappa_c * std::norm(state.a());
  for (std::size_t j = 0; j < state.n; ++j) f += rates[j] * 0.5 * (1.0 + state.s_z(j));
  return f;
}

inline std::vector<double> gamma_eff_rates(const DisorderRealization& realization, const ModelParams& params) {
  std::vector<double> rates(realization.size());
  for (std::size_t j = 0; j < rates.size(); ++j) rates[j] = gamma_eff(realization.ions[j], params);
  return rates;
}

/// Disorder average of kappa_c |a^(k)(t)|^2 over decay trajectories.
inline FluorescenceTrace fluorescence_full(std::span<const Trajectory> trajectories, const ModelParams& params) {
  if (trajectories.empty()) throw std::invalid_argument("fluorescence_full: no trajectories");
  FluorescenceTrace trace;
  trace.times = trajectories.front().times;
  trace.flux.assign(trace.times.size(), 0.0);
  trace.n_traj = static_cast<int>(trajectories.size());
  for (const auto& traj : trajectories) {
    if (traj.times.size() != trace.times.size())
      throw std::invalid_argument("fluorescence_full: trajectories on different grids");
    for (std::size_t i = 0; i < traj.states.size(); ++i)
      trace.flux[i] += params.kappa_c * std::norm(traj.states[i].a());
  }
  for (auto& f : trace.flux) f /= static_cast<double>(trace.n_traj);
  return trace;
}

/// Pulse followed by decay for every realization, averaged in realization order.
inline FluorescenceTrace fluorescence_full(std::span<const DisorderRealization> realizations,
                                           const ModelParams& params, const SimulationOptions& opts = {}) {
  std::vector<Trajectory> trajectories;
  trajectories.reserve(realizations.size());
  for (const auto& r : realizations) trajectories.push_back(run_decay(r, run_pulse(r, params, opts.integrator), params, opts));
  return fluorescence_full(trajectories, params);
}

/// Local-model fluorescence from trajectories integrated with LocalRhs.
inline FluorescenceTrace fluorescence_local(std::span<const Trajectory> trajectories,
                                            std::span<const DisorderRealization> realizations,
                                            const ModelParams& params) {
  if (trajectories.empty() || trajectories.size() != realizations.size())
    throw std::invalid_argument("fluorescence_local: need one trajectory per realization");
  FluorescenceTrace trace;
  trace.times = trajectories.front().times;
  trace.flux.assign(trace.times.size(), 0.0);
  trace.n_traj = static_cast<int>(trajectories.size());
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto rates = gamma_eff_rates(realizations[k], params);
    const auto& traj = trajectories[k];
    if (traj.times.size() != trace.times.size())
      throw std::invalid_argument("fluorescence_local: trajectories on different grids");
    for (std::size_t i = 0; i < traj.states.size(); ++i)
      trace.flux[i] += local_flux(StateView(traj.states[i].flat()), rates, params);
  }
  for (auto& f : trace.flux) f /= static_cast<double>(trace.n_traj);
  return trace;
}

}  // namespace purcell
