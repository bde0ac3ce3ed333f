#pragma once

#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "purcell/csv.hpp"
#include "purcell/distributions.hpp"
#include "purcell/params.hpp"
#include "purcell/rng.hpp"

namespace purcell {

/// One inverse-CDF Cauchy draw centered at zero, redrawn while |delta| > cut.
inline double draw_detuning(RandomStream& stream, double half_width, double cut) {
  for (;;) {
    const double delta = lorentzian_quantile(stream.uniform(), 0.0, half_width);
    if (!(std::abs(delta) > cut)) return delta;
  }
}

/// Gaussian draw, redrawn while non-positive.
inline double draw_coupling(RandomStream& stream, double mean, double sigma) {
  for (;;) {
    const double g = mean + sigma * stream.normal();
    if (g > 0.0) return g;
  }
}

/// Seed of realization `index`; detuning and coupling sub-streams are derived
/// from it so the two variables are drawn independently.
inline std::uint64_t realization_seed(const ModelParams& params, int index) {
  return derive_seed(params.master_seed, static_cast<std::uint64_t>(index));
}

inline DisorderRealization sample_disorder(const ModelParams& params, int realization_index) {
  params.validate();
  DisorderRealization out;
  out.realization_index = realization_index;
  out.realization_seed = realization_seed(params, realization_index);

  RandomStream detunings(derive_seed(out.realization_seed, 0,
                                     static_cast<std::uint64_t>(Substream::detunings)));
  RandomStream couplings(derive_seed(out.realization_seed, 0,
                                     static_cast<std::uint64_t>(Substream::couplings)));

  const double half_width = 0.5 * params.delta_inh;
  const double cut = params.detuning_cutoff * params.delta_inh;
  const auto n = static_cast<std::size_t>(params.n_ions);
  out.ions.resize(n);
  for (std::size_t j = 0; j + 1 < n; ++j) out.ions[j].delta = draw_detuning(detunings, half_width, cut);
  out.ions[n - 1].delta = 0.0;
  for (auto& ion : out.ions) ion.g = draw_coupling(couplings, params.g_mean, params.g_std);
  return out;
}

inline std::vector<DisorderRealization> sample_ensemble(const ModelParams& params) {
  std::vector<DisorderRealization> out;
  out.reserve(static_cast<std::size_t>(params.n_traj));
  for (int k = 0; k < params.n_traj; ++k) out.push_back(sample_disorder(params, k));
  return out;
}

/// CSV columns: realization_index, ion_index, delta_j, g_j.
inline void write_realizations_csv(std::ostream& os, std::span<const DisorderRealization> realizations) {
  CsvWriter csv(os);
  csv.header({"realization_index", "ion_index", "delta_j", "g_j"});
  for (const auto& r : realizations) {
    for (std::size_t j = 0; j < r.ions.size(); ++j) {
      csv.row(r.realization_index, static_cast<long long>(j), r.ions[j].delta, r.ions[j].g);
    }
  }
}

}  // namespace purcell
