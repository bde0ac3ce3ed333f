#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "purcell/params.hpp"
#include "purcell/state.hpp"

namespace purcell {

/// Spin excitation 1 + s_z binned by ion detuning, pooled over realizations.
/// Empty bins hold std::nullopt.
struct SurvivalHistogram {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::vector<std::optional<double>> mean_initial;
  std::vector<std::optional<double>> std_initial;
  std::vector<std::optional<double>> mean_excitation;
  std::vector<std::optional<double>> std_excitation;
  /// [1 + mean s_z(t)] / [1 + mean s_z(0)] per bin
  std::vector<std::optional<double>> fractional_survival;
  /// delta-method standard error of the survival ratio from the per-bin standard errors
  std::vector<std::optional<double>> survival_stderr;
  double time = 0.0;

  [[nodiscard]] std::size_t n_bins() const noexcept { return counts.size(); }
  [[nodiscard]] double bin_center(std::size_t b) const { return 0.5 * (bin_edges[b] + bin_edges[b + 1]); }

  /// Index of the bin containing `delta`, or nullopt outside the binned range.
  [[nodiscard]] std::optional<std::size_t> bin_of(double delta) const {
    if (delta < bin_edges.front() || delta > bin_edges.back()) return std::nullopt;
    for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b)
      if (delta < bin_edges[b + 1]) return b;
    return n_bins() - 1;
  }
};

struct BinningOptions {
  int n_bins = 20;
  double lo = 0.0;  ///< lo == hi selects [-Delta_inh, Delta_inh]
  double hi = 0.0;
};

/// Bins s_z snapshots at the pulse end (`initial`) and at `time` (`later`);
/// both are indexed [realization][ion].
inline SurvivalHistogram bin_survival(std::span<const DisorderRealization> realizations,
                                      std::span<const std::vector<double>> initial,
                                      std::span<const std::vector<double>> later, double time,
                                      const BinningOptions& binning, double delta_inh) {
  if (binning.n_bins < 1) throw std::invalid_argument("bin_survival: n_bins must be positive");
  if (initial.size() != realizations.size() || later.size() != realizations.size())
    throw std::invalid_argument("bin_survival: need one snapshot per realization");
  double lo = binning.lo, hi = binning.hi;
  if (lo == hi) {
    lo = -delta_inh;
    hi = delta_inh;
  }
  if (!(hi > lo)) throw std::invalid_argument("bin_survival: empty binning range");

  SurvivalHistogram h;
  const auto nb = static_cast<std::size_t>(binning.n_bins);
  h.time = time;
  h.bin_edges.resize(nb + 1);
  for (std::size_t b = 0; b <= nb; ++b) h.bin_edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(nb);
  h.counts.assign(nb, 0);

  std::vector<double> sum0(nb, 0.0), sq0(nb, 0.0), sum1(nb, 0.0), sq1(nb, 0.0);
  for (std::size_t k = 0; k < realizations.size(); ++k) {
    const auto& ions = realizations[k].ions;
    if (initial[k].size() != ions.size() || later[k].size() != ions.size())
      throw std::invalid_argument("bin_survival: snapshot size does not match realization");
    for (std::size_t j = 0; j < ions.size(); ++j) {
      const auto b = h.bin_of(ions[j].delta);
      if (!b) continue;
      const double e0 = 1.0 + initial[k][j];
      const double e1 = 1.0 + later[k][j];
      ++h.counts[*b];
      sum0[*b] += e0;
      sq0[*b] += e0 * e0;
      sum1[*b] += e1;
      sq1[*b] += e1 * e1;
    }
  }

  auto resize = [nb](auto& v) { v.assign(nb, std::nullopt); };
  resize(h.mean_initial);
  resize(h.std_initial);
  resize(h.mean_excitation);
  resize(h.std_excitation);
  resize(h.fractional_survival);
  resize(h.survival_stderr);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto n = static_cast<double>(h.counts[b]);
    if (h.counts[b] == 0) continue;
    const double m0 = sum0[b] / n, m1 = sum1[b] / n;
    const double v0 = h.counts[b] > 1 ? std::max(0.0, (sq0[b] - n * m0 * m0) / (n - 1.0)) : 0.0;
    const double v1 = h.counts[b] > 1 ? std::max(0.0, (sq1[b] - n * m1 * m1) / (n - 1.0)) : 0.0;
    h.mean_initial[b] = m0;
    h.std_initial[b] = std::sqrt(v0);
    h.mean_excitation[b] = m1;
    h.std_excitation[b] = std::sqrt(v1);
    if (m0 > 0.0) {
      const double ratio = m1 / m0;
      h.fractional_survival[b] = ratio;
      const double rel0 = std::sqrt(v0 / n) / m0;
      const double rel1 = m1 > 0.0 ? std::sqrt(v1 / n) / m1 : 0.0;
      h.survival_stderr[b] = ratio * std::sqrt(rel0 * rel0 + rel1 * rel1);
    }
  }
  return h;
}

/// s_z of every ion at `time`, linearly interpolated between trajectory samples.
inline std::vector<double> populations_at(const Trajectory& traj, double time) {
  if (traj.times.empty() || time < traj.times.front() - 1e-12 || time > traj.times.back() + 1e-12)
    throw std::invalid_argument("populations_at: time outside the trajectory span");
  std::size_t i = 0;
  while (i + 1 < traj.times.size() && traj.times[i + 1] < time) ++i;
  const auto& s0 = traj.states[i];
  std::vector<double> out(s0.n_ions());
  if (i + 1 >= traj.times.size() || traj.times[i] >= time) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = s0.s_z(j);
    return out;
  }
  const auto& s1 = traj.states[i + 1];
  const double w = (time - traj.times[i]) / (traj.times[i + 1] - traj.times[i]);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (1.0 - w) * s0.s_z(j) + w * s1.s_z(j);
  return out;
}

/// Convenience overload on full decay trajectories (first sample = pulse end).
inline SurvivalHistogram bin_survival(std::span<const DisorderRealization> realizations,
                                      std::span<const Trajectory> trajectories, double time,
                                      const BinningOptions& binning, double delta_inh) {
  if (trajectories.size() != realizations.size())
    throw std::invalid_argument("bin_survival: need one trajectory per realization");
  std::vector<std::vector<double>> initial, later;
  for (const auto& traj : trajectories) {
    initial.push_back(populations_at(traj, traj.times.front()));
    later.push_back(populations_at(traj, traj.times.front() + time));
  }
  return bin_survival(realizations, initial, later, time, binning, delta_inh);
}

}  // namespace purcell
