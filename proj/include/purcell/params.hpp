#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace purcell {

inline constexpr const char* kVersion = "0.3.1";

/// Physical and numerical parameters of one ensemble simulation.
///
/// Everything is expressed in units of the total cavity damping rate: rates
/// and detunings in units of kappa, times in units of 1/kappa. The defaults
/// are the desk-scale simulation values (N = 61 ions, 120 disorder
/// realizations, gamma = 0.005, kappa_c = 0.8, Delta_inh = 5, g = 0.07).
struct ModelParams {
  double kappa = 1.0;       ///< total cavity damping rate
  double kappa_c = 0.8;     ///< input/output port damping rate
  double gamma = 0.005;     ///< intrinsic spin relaxation rate
  double delta_c = 0.0;     ///< cavity-laser detuning
  double beta_in = 0.1;     ///< drive amplitude, sqrt of incident photon flux
  double delta_inh = 5.0;   ///< inhomogeneous FWHM of ion detunings
  double g_mean = 0.07;     ///< mean ion-cavity coupling
  double g_std = 0.007;     ///< coupling standard deviation
  int n_ions = 61;
  int n_traj = 120;
  double t_pulse = 1000.0;
  double t_decay = 400.0;
  std::uint64_t master_seed = 20240611;
  /// Detunings with |delta| > detuning_cutoff * delta_inh are redrawn.
  /// Infinity disables the truncation.
  double detuning_cutoff = 10.0;

  /// Incident photon flux phi = beta_in^2.
  [[nodiscard]] double flux() const noexcept { return beta_in * beta_in; }

  void set_flux(double phi) {
    if (!(phi >= 0.0)) throw std::invalid_argument("flux must be non-negative");
    beta_in = std::sqrt(phi);
  }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("invalid model parameter: ") + what);
    };
    require(kappa > 0.0 && std::isfinite(kappa), "kappa > 0");
    require(kappa_c > 0.0 && kappa_c <= kappa, "0 < kappa_c <= kappa");
    require(gamma > 0.0 && std::isfinite(gamma), "gamma > 0");
    require(std::isfinite(delta_c), "delta_c finite");
    require(beta_in >= 0.0 && std::isfinite(beta_in), "beta_in >= 0");
    require(delta_inh > 0.0 && std::isfinite(delta_inh), "delta_inh > 0");
    require(g_mean > 0.0 && std::isfinite(g_mean), "g_mean > 0");
    require(g_std >= 0.0 && std::isfinite(g_std), "g_std >= 0");
    require(n_ions >= 1, "n_ions >= 1");
    require(n_traj >= 1, "n_traj >= 1");
    require(t_pulse >= 0.0 && std::isfinite(t_pulse), "t_pulse >= 0");
    require(t_decay > 0.0 && std::isfinite(t_decay), "t_decay > 0");
    require(detuning_cutoff > 0.0, "detuning_cutoff > 0");
  }
};

/// Detuning and coupling of a single ion.
struct IonParams {
  double delta = 0.0;
  double g = 0.0;

  friend bool operator==(const IonParams&, const IonParams&) = default;
};

/// One sampled ensemble. The last ion is always resonant with the drive.
struct DisorderRealization {
  std::vector<IonParams> ions;
  int realization_index = 0;
  std::uint64_t realization_seed = 0;

  [[nodiscard]] std::size_t size() const noexcept { return ions.size(); }
  [[nodiscard]] bool empty() const noexcept { return ions.empty(); }

  friend bool operator==(const DisorderRealization& lhs, const DisorderRealization& rhs) {
    if (lhs.realization_seed != rhs.realization_seed || lhs.ions.size() != rhs.ions.size()) return false;
    for (std::size_t j = 0; j < lhs.ions.size(); ++j) {
      if (lhs.ions[j].delta != rhs.ions[j].delta || lhs.ions[j].g != rhs.ions[j].g) return false;
    }
    return true;
  }
};

}  // namespace purcell
