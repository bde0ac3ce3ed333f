// Randomized exact-recovery harness shared by the fitting suite and the
// acceptance binary.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "purcell/fit_models.hpp"
#include "purcell/rng.hpp"

namespace purcell::testsupport {

struct RecoveryCase {
  std::string model;
  std::vector<double> x;
  std::vector<double> truth;
  std::vector<double> guess;
};

struct RecoveryOutcome {
  std::string model;
  int draws = 0;
  int failures = 0;
  double worst_relative_error = 0.0;
  int max_iterations = 0;
};

namespace detail {

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return out;
}

inline std::vector<double> logspace(double lo_exp, double hi_exp, int n) {
  auto out = linspace(lo_exp, hi_exp, n);
  for (auto& v : out) v = std::pow(10.0, v);
  return out;
}

inline double draw(RandomStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline std::vector<double> sample_truth(const std::string& model, RandomStream& rng) {
  if (model == "exponential") return {draw(rng, 0.5, 2.0), draw(rng, 0.005, 0.05)};
  if (model == "stretched")
    return {draw(rng, 0.5, 2.0), draw(rng, 20.0, 60.0),  draw(rng, 0.6, 1.2),
            draw(rng, 0.1, 0.4), draw(rng, 250.0, 400.0), draw(rng, 0.01, 0.05)};
  if (model == "lorentzian") {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return {draw(rng, 0.5, 2.0), sign * draw(rng, 0.2, 1.0), draw(rng, 0.5, 1.5), draw(rng, 0.01, 0.1)};
  }
  if (model == "double_lorentzian")
    return {draw(rng, 0.5, 2.0),  draw(rng, 1.0, 2.0),  draw(rng, 0.4, 1.0),
            -draw(rng, 1.0, 2.0), draw(rng, 0.4, 1.0), draw(rng, 0.01, 0.1)};
  if (model == "ple") return {draw(rng, 0.5, 2.0), draw(rng, 0.05, 0.5)};
  throw std::invalid_argument("unknown recovery model " + model);
}

inline std::vector<double> abscissa(const std::string& model) {
  if (model == "exponential") return linspace(30.0, 400.0, 741);
  if (model == "stretched") return linspace(0.0, 2000.0, 401);
  if (model == "ple") return logspace(-2.0, 3.0, 11);
  return linspace(-5.0, 5.0, 41);
}

}  // namespace detail

inline double evaluate(const std::string& model, double x, std::span<const double> p) {
  if (model == "exponential") return exponential_model(x, p);
  if (model == "stretched") return stretched_composite_model(x, p);
  if (model == "lorentzian") return lorentzian_model(x, p);
  if (model == "double_lorentzian") return double_lorentzian_model(x, p);
  return ple_model(x, p);
}

inline FitResult fit_by_name(const std::string& model, std::span<const double> x, std::span<const double> y,
                             const FitOptions& opts) {
  if (model == "exponential") return fit_exponential(x, y, x.front(), x.back(), opts);
  if (model == "stretched") return fit_stretched_composite(x, y, std::nullopt, opts);
  if (model == "lorentzian") return fit_lorentzian_single(x, y, opts);
  if (model == "double_lorentzian") return fit_double_lorentzian(x, y, opts);
  return fit_ple_saturation(x, y, opts);
}

inline RecoveryCase make_case(const std::string& model, RandomStream& rng, double perturbation) {
  RecoveryCase c;
  c.model = model;
  c.x = detail::abscissa(model);
  c.truth = detail::sample_truth(model, rng);
  c.guess = c.truth;
  for (auto& g : c.guess) g *= 1.0 + perturbation * (2.0 * rng.uniform() - 1.0);
  return c;
}

inline const std::vector<std::string>& recovery_models() {
  static const std::vector<std::string> models{"exponential", "stretched", "lorentzian", "double_lorentzian", "ple"};
  return models;
}

/// Fits noiseless data from `draws` random parameter sets, each started from
/// a guess perturbed by up to `perturbation` (relative), and records the
/// worst relative parameter error.
inline RecoveryOutcome run_recovery(const std::string& model, int draws, std::uint64_t seed,
                                    double perturbation = 0.2, double tolerance = 1e-6,
                                    const std::function<void(const RecoveryCase&, const FitResult&)>& on_failure = {}) {
  RecoveryOutcome out;
  out.model = model;
  RandomStream rng(seed);
  for (int k = 0; k < draws; ++k) {
    const auto c = make_case(model, rng, perturbation);
    std::vector<double> y(c.x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = evaluate(model, c.x[i], c.truth);
    FitOptions opts;
    opts.initial_guess = c.guess;
    const auto fit = fit_by_name(model, c.x, y, opts);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.truth.size(); ++i)
      worst = std::max(worst, std::abs(fit.parameters[i] - c.truth[i]) / std::abs(c.truth[i]));
    ++out.draws;
    out.worst_relative_error = std::max(out.worst_relative_error, worst);
    out.max_iterations = std::max(out.max_iterations, fit.iterations);
    if (!(worst <= tolerance)) {
      ++out.failures;
      if (on_failure) on_failure(c, fit);
    }
  }
  return out;
}

}  // namespace purcell::testsupport
