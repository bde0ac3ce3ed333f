#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "purcell/params.hpp"
#include "purcell/state.hpp"

namespace purcell {

/// Drive-dependent steady state of the mean-field equations.
struct SteadyState {
  complex a_ss{0.0, 0.0};
  std::vector<double> s_z;
  std::vector<complex> s_minus;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  bool used_scalar_fallback = false;

  /// Ions with s_z <= -1/2, i.e. not depolarized by the drive.
  [[nodiscard]] int polarized_count() const {
    return static_cast<int>(std::count_if(s_z.begin(), s_z.end(), [](double v) { return v <= -0.5; }));
  }
};

struct SteadyStateOptions {
  double damping = 0.5;
  double tolerance = 1e-12;
  int max_iterations = 10'000;
  int oscillation_window = 100;  ///< residual increases tolerated before switching to the scalar solve
  int scan_points = 4000;
};

/// s_z of a spin with coupling g and detuning delta driven by a field of
/// squared magnitude `a_sq`: -(1 + 2 g^2 |a|^2 / (delta^2 + gamma^2/4))^-1.
inline double steady_population(double a_sq, const IonParams& ion, double gamma) {
  return -1.0 / (1.0 + 2.0 * ion.g * ion.g * a_sq / (ion.delta * ion.delta + 0.25 * gamma * gamma));
}

/// Cavity field for given spin populations, including the spin self-energy.
inline complex steady_field(std::span<const double> s_z, const DisorderRealization& realization,
                            const ModelParams& params) {
  complex denom(params.delta_c, -0.5 * params.kappa);
  for (std::size_t j = 0; j < realization.size(); ++j) {
    const auto& ion = realization.ions[j];
    denom += ion.g * ion.g * s_z[j] / complex(ion.delta, -0.5 * params.gamma);
  }
  return complex(0.0, std::sqrt(params.kappa_c) * params.beta_in) / denom;
}

/// Decoupled single-spin steady state (s_z, s_-) under a coherent field a_ss.
inline std::pair<double, complex> single_spin_steady_state(complex a_ss, const IonParams& ion, double gamma) {
  const double drive = 8.0 * std::norm(a_ss) * ion.g * ion.g;
  const double denom = drive + gamma * gamma + 4.0 * ion.delta * ion.delta;
  const double s_z = -1.0 + drive / denom;
  const complex s_minus = -2.0 * a_ss * ion.g * complex(2.0 * ion.delta, gamma) / denom;
  return {s_z, s_minus};
}

/// Max-norm residual of the self-consistency equations at (a, s_z).
inline double steady_state_residual(complex a, std::span<const double> s_z, const DisorderRealization& realization,
                                    const ModelParams& params) {
  double r = std::abs(a - steady_field(s_z, realization, params));
  const double a_sq = std::norm(a);
  for (std::size_t j = 0; j < realization.size(); ++j)
    r = std::max(r, std::abs(s_z[j] - steady_population(a_sq, realization.ions[j], params.gamma)));
  return r;
}

namespace detail {

inline void fill_populations(double a_sq, const DisorderRealization& realization, double gamma,
                             std::vector<double>& s_z) {
  for (std::size_t j = 0; j < realization.size(); ++j)
    s_z[j] = steady_population(a_sq, realization.ions[j], gamma);
}

/// Smallest root of |F(x)| = x, where F is the field produced by populations
/// driven at |a| = x. The smallest root is the branch reached continuously
/// from weak drive.
inline complex scalar_field_solve(const DisorderRealization& realization, const ModelParams& params,
                                  int scan_points, std::vector<double>& s_z) {
  auto field_at = [&](double x) {
    fill_populations(x * x, realization, params.gamma, s_z);
    return steady_field(s_z, realization, params);
  };
  auto mismatch = [&](double x) { return std::abs(field_at(x)) - x; };

  // |F| is bounded by the empty-cavity response.
  const double upper = 2.0 * std::sqrt(params.kappa_c) * params.beta_in / params.kappa * (1.0 + 1e-9) + 1e-300;
  double lo = 0.0, hi = upper;
  double prev = mismatch(0.0);
  for (int i = 1; i <= scan_points; ++i) {
    const double x = upper * static_cast<double>(i) / scan_points;
    const double m = mismatch(x);
    if (prev > 0.0 && m <= 0.0) {
      lo = upper * static_cast<double>(i - 1) / scan_points;
      hi = x;
      break;
    }
    prev = m;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mismatch(mid) > 0.0 ? lo : hi) = mid;
  }
  complex a = field_at(0.5 * (lo + hi));
  // a few undamped sweeps polish the root to machine precision
  for (int it = 0; it < 5; ++it) {
    fill_populations(std::norm(a), realization, params.gamma, s_z);
    a = steady_field(s_z, realization, params);
  }
  fill_populations(std::norm(a), realization, params.gamma, s_z);
  return a;
}

}  // namespace detail

/// Self-consistent steady state by damped fixed-point iteration between the
/// field equation and the population equation, starting from the weak-drive
/// state. Non-convergence is reported through `converged`, never thrown.
inline SteadyState steady_state_self_consistent(const DisorderRealization& realization, const ModelParams& params,
                                                const SteadyStateOptions& opts = {}) {
  const std::size_t n = realization.size();
  SteadyState out;
  out.s_z.assign(n, -1.0);
  std::vector<double> s_z_next(n);

  complex a = steady_field(out.s_z, realization, params);
  double prev_residual = std::numeric_limits<double>::infinity();
  int increases = 0;
  bool oscillating = false;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    detail::fill_populations(std::norm(a), realization, params.gamma, s_z_next);
    const complex a_target = steady_field(s_z_next, realization, params);
    const complex a_next = (1.0 - opts.damping) * a + opts.damping * a_target;

    double change = std::abs(a_next - a);
    for (std::size_t j = 0; j < n; ++j) change = std::max(change, std::abs(s_z_next[j] - out.s_z[j]));
    a = a_next;
    out.s_z.swap(s_z_next);
    out.iterations = it;

    const double residual = std::abs(a_target - a) / opts.damping;
    if (residual > prev_residual) {
      if (++increases >= opts.oscillation_window) {
        oscillating = true;
        break;
      }
    }
    prev_residual = residual;
    if (change < opts.tolerance) break;
  }
  detail::fill_populations(std::norm(a), realization, params.gamma, out.s_z);
  out.residual = steady_state_residual(a, out.s_z, realization, params);

  if (oscillating || out.residual >= 1e-10) {
    std::vector<double> s_z(n);
    const complex b = detail::scalar_field_solve(realization, params, opts.scan_points, s_z);
    const double res_b = steady_state_residual(b, s_z, realization, params);
    if (res_b < out.residual) {
      a = b;
      out.s_z = std::move(s_z);
      out.residual = res_b;
      out.used_scalar_fallback = true;
    }
  }

  out.a_ss = a;
  out.converged = out.residual < 1e-10;
  out.s_minus.resize(n);
  for (std::size_t j = 0; j < n; ++j)
    out.s_minus[j] = single_spin_steady_state(a, realization.ions[j], params.gamma).second;
  return out;
}

/// Weak-excitation steady field averaged over the Lorentzian detuning and
/// Gaussian coupling distributions; the averaged self-energy only adds loss.
inline complex disorder_averaged_field(const ModelParams& params, double n_eff) {
  if (n_eff < 0.0 || n_eff > params.n_ions)
    throw std::invalid_argument("disorder_averaged_field: need 0 <= n_eff <= n_ions");
  const double broadening = 2.0 * n_eff * (params.g_mean * params.g_mean + params.g_std * params.g_std) /
                            (params.gamma + params.delta_inh);
  return complex(0.0, std::sqrt(params.kappa_c) * params.beta_in) /
         complex(params.delta_c, -(0.5 * params.kappa + broadening));
}

struct CooperativityReport {
  double c_collective = 0.0;        ///< 4 N g^2 / (kappa gamma)
  double c_inh = 0.0;               ///< 4 N_eff g^2 / (Delta_inh kappa)
  double n_eff = 0.0;
  double kappa_renormalized = 0.0;  ///< kappa + 4 N_eff (g^2 + sigma^2) / (gamma + Delta_inh)
  double renormalization = 0.0;    ///< (kappa_renormalized - kappa) / kappa
};

inline CooperativityReport cooperativities(const ModelParams& params, double n_eff) {
  CooperativityReport r;
  const double g2 = params.g_mean * params.g_mean;
  r.n_eff = n_eff;
  r.c_collective = 4.0 * params.n_ions * g2 / (params.kappa * params.gamma);
  r.c_inh = 4.0 * n_eff * g2 / (params.delta_inh * params.kappa);
  r.kappa_renormalized =
      params.kappa + 4.0 * n_eff * (g2 + params.g_std * params.g_std) / (params.gamma + params.delta_inh);
  r.renormalization = (r.kappa_renormalized - params.kappa) / params.kappa;
  return r;
}

}  // namespace purcell
