#pragma once

// Model functions of the decay/rate analysis and their fit drivers with
// pinned initial-guess heuristics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "purcell/distributions.hpp"
#include "purcell/least_squares.hpp"
#include "purcell/state.hpp"

namespace purcell {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct FitOptions {
  std::optional<std::vector<double>> initial_guess;
  LeastSquaresOptions solver{};
};

// ---- model functions -------------------------------------------------------

/// c exp(-Gamma t); p = (c, Gamma)
inline double exponential_model(double t, std::span<const double> p) { return p[0] * std::exp(-p[1] * t); }

/// A exp(-(t/tau1)^d) + B exp(-t/tau2) + C; p = (A, tau1, d, B, tau2, C)
inline double stretched_composite_model(double t, std::span<const double> p) {
  return p[0] * std::exp(-std::pow(t / p[1], p[2])) + p[3] * std::exp(-t / p[4]) + p[5];
}

/// amplitude L(x, center, h) + offset; p = (amplitude, center, h, offset)
inline double lorentzian_model(double x, std::span<const double> p) {
  return p[0] * lorentzian_pdf(x, p[1], p[2]) + p[3];
}

/// a [L(x, D+, h+) + L(x, D-, h-)] + b; p = (a, Delta_plus, h_plus, Delta_minus, h_minus, b)
inline double double_lorentzian_model(double x, std::span<const double> p) {
  return p[0] * (lorentzian_pdf(x, p[1], p[2]) + lorentzian_pdf(x, p[3], p[4])) + p[5];
}

/// PLE saturation p1 / (p2 + 1/phi); p = (p1, p2)
inline double ple_model(double phi, std::span<const double> p) { return p[0] / (p[1] + 1.0 / phi); }

// ---- helpers ---------------------------------------------------------------

namespace detail {

inline void require_increasing(std::span<const double> x, const char* who) {
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!(x[i] > x[i - 1])) throw std::invalid_argument(std::string(who) + ": abscissa must be strictly increasing");
}

/// Least-squares line through (x, y): returns (intercept, slope).
inline std::pair<double, double> linear_regression(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  return {my - slope * mx, slope};
}

/// Half-width from the half-maximum crossings around index `peak`.
inline double half_width_at_half_max(std::span<const double> x, std::span<const double> y, std::size_t peak,
                                     double base) {
  const double half = base + 0.5 * (y[peak] - base);
  auto crossing = [&](int dir) -> std::optional<double> {
    for (auto i = static_cast<std::ptrdiff_t>(peak); i + dir >= 0 && i + dir < static_cast<std::ptrdiff_t>(x.size());
         i += dir) {
      const auto k = static_cast<std::size_t>(i), kn = static_cast<std::size_t>(i + dir);
      if (y[kn] <= half) {
        const double w = (y[k] - half) / (y[k] - y[kn]);
        return x[k] + w * (x[kn] - x[k]);
      }
    }
    return std::nullopt;
  };
  const auto left = crossing(-1), right = crossing(+1);
  const double span = x.back() - x.front();
  if (left && right) return 0.5 * (*right - *left);
  if (left) return x[peak] - *left;
  if (right) return *right - x[peak];
  return 0.25 * span;
}

inline FitResult finish(FitResult r, std::string model) {
  r.model = std::move(model);
  return r;
}

}  // namespace detail

// ---- exponential decay -----------------------------------------------------

/// Two-stage fit of c exp(-Gamma t) on samples with t in [t_lo, t_hi]: a
/// log-space line through the positive samples seeds a linear-scale
/// Levenberg-Marquardt refinement.
inline FitResult fit_exponential(std::span<const double> t, std::span<const double> flux, double t_lo, double t_hi,
                                 const FitOptions& opts = {}) {
  if (t.size() != flux.size()) throw std::invalid_argument("fit_exponential: length mismatch");
  std::vector<double> xs, ys, lx, ly;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo - 1e-12 || t[i] > t_hi + 1e-12) continue;
    xs.push_back(t[i]);
    ys.push_back(flux[i]);
    if (flux[i] > 0.0) {
      lx.push_back(t[i]);
      ly.push_back(std::log(flux[i]));
    }
  }
  if (xs.size() < 10) throw std::invalid_argument("fit_exponential: fewer than 10 samples in the fit window");
  if (lx.size() < 2) throw std::domain_error("fit_exponential: no positive flux in the fit window");

  std::vector<double> guess;
  if (opts.initial_guess) {
    guess = *opts.initial_guess;
  } else {
    const auto [intercept, slope] = detail::linear_regression(lx, ly);
    guess = {std::exp(intercept), -slope};
  }
  auto r = least_squares(exponential_model, xs, ys, guess, {"c", "Gamma"}, std::nullopt, opts.solver);
  r.window = std::pair{t_lo, t_hi};
  r.derived["Gamma"] = r.parameters[1];
  return detail::finish(std::move(r), "exponential");
}

inline FitResult fit_exponential(const FluorescenceTrace& trace, double t_lo, double t_hi,
                                 const FitOptions& opts = {}) {
  return fit_exponential(trace.times, trace.flux, t_lo, t_hi, opts);
}

// ---- stretched composite ---------------------------------------------------

inline Bounds stretched_composite_bounds(double time_span) {
  const double tiny = 1e-9 * time_span;
  return {{0.0, tiny, 1e-3, 0.0, tiny, -kInf}, {kInf, kInf, 1.5, kInf, kInf, kInf}};
}

/// Initial guess: C from the last 5% of samples, (B, tau2) from a log-line
/// through the late half, A from the remainder at t0, tau1 from the 1/e
/// crossing of the fast remainder, d = 1.
inline std::vector<double> stretched_composite_guess(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 20);
  double c0 = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) c0 += y[i];
  c0 /= static_cast<double>(tail);

  const double t0 = t.front(), span = t.back() - t.front();
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] < t0 + 0.5 * span || t[i] > t0 + 0.9 * span) continue;
    if (y[i] - c0 > 0.0) {
      lx.push_back(t[i] - t0);
      ly.push_back(std::log(y[i] - c0));
    }
  }
  double b0 = 0.0, tau2 = span;
  if (lx.size() >= 2) {
    const auto [intercept, slope] = detail::linear_regression(lx, ly);
    if (slope < 0.0) tau2 = -1.0 / slope;
    b0 = std::exp(intercept);
  }
  const double total = y.front() - c0;
  if (b0 > 0.9 * total) b0 = 0.5 * total;
  const double a0 = std::max(total - b0, 0.1 * std::abs(total));
  double tau1 = 0.1 * span;
  for (std::size_t i = 0; i < n; ++i) {
    const double fast = y[i] - c0 - b0 * std::exp(-(t[i] - t0) / tau2);
    if (fast <= a0 / std::numbers::e) {
      tau1 = std::max(t[i] - t0, 1e-3 * span);
      break;
    }
  }
  return {a0, tau1, 1.0, std::max(b0, 0.0), std::max(tau2, tau1), c0};
}

/// Fits the histogram; reports Gamma = 1/tau1 and, when gamma_0 is given,
/// the Purcell ratio Gamma / gamma_0.
inline FitResult fit_stretched_composite(std::span<const double> t, std::span<const double> counts,
                                         std::optional<double> gamma_0 = std::nullopt, const FitOptions& opts = {}) {
  if (t.size() != counts.size()) throw std::invalid_argument("fit_stretched_composite: length mismatch");
  if (t.size() < 20) throw std::invalid_argument("fit_stretched_composite: need at least 20 samples");
  detail::require_increasing(t, "fit_stretched_composite");
  const auto guess = opts.initial_guess ? *opts.initial_guess : stretched_composite_guess(t, counts);
  auto r = least_squares(stretched_composite_model, t, counts, guess, {"A", "tau1", "d", "B", "tau2", "C"},
                         stretched_composite_bounds(t.back() - t.front()), opts.solver);
  r.derived["Gamma"] = 1.0 / r.parameters[1];
  if (gamma_0) r.derived["purcell_ratio"] = r.derived["Gamma"] / *gamma_0;
  // A pinned at zero leaves tau1 and d undetermined.
  if (r.at_bound[0]) {
    r.converged = false;
    r.parameter_errors.clear();
    r.message = "fast component amplitude at bound; tau1 not identifiable";
  }
  return detail::finish(std::move(r), "stretched");
}

// ---- single Lorentzian -----------------------------------------------------

/// Guess: offset = min, center = argmax, h from half-max crossings,
/// amplitude = (max - offset) pi h.
inline std::vector<double> lorentzian_guess(std::span<const double> x, std::span<const double> y) {
  const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double base = *std::min_element(y.begin(), y.end());
  double h = detail::half_width_at_half_max(x, y, peak, base);
  if (!(h > 0.0)) h = 0.25 * (x.back() - x.front());
  return {(y[peak] - base) * std::numbers::pi * h, x[peak], h, base};
}

inline FitResult fit_lorentzian_single(std::span<const double> x, std::span<const double> y,
                                       const FitOptions& opts = {}) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_lorentzian_single: length mismatch");
  if (x.size() < 6) throw std::invalid_argument("fit_lorentzian_single: need at least 6 points");
  detail::require_increasing(x, "fit_lorentzian_single");
  const double span = x.back() - x.front();
  const auto guess = opts.initial_guess ? *opts.initial_guess : lorentzian_guess(x, y);
  const Bounds b{{0.0, -kInf, 1e-9 * span, -kInf}, {kInf, kInf, kInf, kInf}};
  auto r = least_squares(lorentzian_model, x, y, guess, {"amplitude", "center", "h", "offset"}, b, opts.solver);
  r.derived["fwhm"] = 2.0 * r.parameters[2];
  return detail::finish(std::move(r), "lorentzian");
}

// ---- double Lorentzian -----------------------------------------------------

/// Indices of interior and edge local maxima, largest first.
inline std::vector<std::size_t> local_maxima(std::span<const double> y) {
  std::vector<std::size_t> idx;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool left_ok = i == 0 || y[i] > y[i - 1];
    const bool right_ok = i + 1 == n || y[i] >= y[i + 1];
    if (left_ok && right_ok && (i != 0 || n == 1 || y[0] > y[1]) && (i + 1 != n || y[n - 1] > y[n - 2]))
      idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
  return idx;
}

/// Guess from the two largest local maxima (Delta_- < Delta_+); with a single
/// maximum the peaks straddle it at +-h/2.
inline std::vector<double> double_lorentzian_guess(std::span<const double> x, std::span<const double> y) {
  const double base = *std::min_element(y.begin(), y.end());
  const auto maxima = local_maxima(y);
  const auto top = maxima.empty() ? static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())
                                  : maxima.front();
  const double hw = std::max(detail::half_width_at_half_max(x, y, top, base), 1e-6 * (x.back() - x.front()));
  double lo_c, hi_c, h;
  if (maxima.size() >= 2) {
    lo_c = std::min(x[maxima[0]], x[maxima[1]]);
    hi_c = std::max(x[maxima[0]], x[maxima[1]]);
    h = std::max(0.5 * std::min(hw, hi_c - lo_c), 1e-6 * (x.back() - x.front()));
  } else {
    lo_c = x[top] - 0.5 * hw;
    hi_c = x[top] + 0.5 * hw;
    h = hw;
  }
  const double a = 0.5 * (y[top] - base) * std::numbers::pi * h;
  return {a, hi_c, h, lo_c, h, base};
}

/// Orders the peaks so that Delta_+ >= Delta_-.
inline void normalize_double_lorentzian(std::vector<double>& p) {
  if (p[1] < p[3]) {
    std::swap(p[1], p[3]);
    std::swap(p[2], p[4]);
  }
}

inline FitResult fit_double_lorentzian(std::span<const double> x, std::span<const double> y,
                                       const FitOptions& opts = {}) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_double_lorentzian: length mismatch");
  if (x.size() < 8) throw std::invalid_argument("fit_double_lorentzian: need at least 8 points");
  detail::require_increasing(x, "fit_double_lorentzian");
  const double span = x.back() - x.front();
  const auto guess = opts.initial_guess ? *opts.initial_guess : double_lorentzian_guess(x, y);
  const Bounds b{{0.0, -kInf, 1e-9 * span, -kInf, 1e-9 * span, -kInf}, {kInf, kInf, kInf, kInf, kInf, kInf}};
  auto r = least_squares(double_lorentzian_model, x, y, guess,
                         {"a", "Delta_plus", "h_plus", "Delta_minus", "h_minus", "b"}, b, opts.solver);
  if (r.parameters[1] < r.parameters[3]) {
    normalize_double_lorentzian(r.parameters);
    if (!r.parameter_errors.empty()) {
      std::swap(r.parameter_errors[1], r.parameter_errors[3]);
      std::swap(r.parameter_errors[2], r.parameter_errors[4]);
    }
    const bool b1 = r.at_bound[1], b2 = r.at_bound[2];
    r.at_bound[1] = r.at_bound[3];
    r.at_bound[2] = r.at_bound[4];
    r.at_bound[3] = b1;
    r.at_bound[4] = b2;
  }
  r.derived["splitting"] = r.parameters[1] - r.parameters[3];
  return detail::finish(std::move(r), "double_lorentzian");
}

// ---- PLE saturation --------------------------------------------------------

/// Guess: p1 from the slope at the smallest flux, p2 from the largest-flux
/// intensity taken as the saturation value p1/p2.
inline std::vector<double> ple_guess(std::span<const double> phi, std::span<const double> intensity) {
  const double p1 = intensity.front() / phi.front();
  const double sat = std::max(intensity.back(), intensity.front());
  return {p1, std::max(p1 / sat, 1e-12)};
}

inline FitResult fit_ple_saturation(std::span<const double> phi, std::span<const double> intensity,
                                    const FitOptions& opts = {}) {
  if (phi.size() != intensity.size()) throw std::invalid_argument("fit_ple_saturation: length mismatch");
  if (phi.size() < 4) throw std::invalid_argument("fit_ple_saturation: need at least 4 flux points");
  detail::require_increasing(phi, "fit_ple_saturation");
  if (!(phi.front() > 0.0) || phi.back() < 10.0 * phi.front())
    throw std::invalid_argument("fit_ple_saturation: fluxes must be positive and span at least one decade");
  const auto guess = opts.initial_guess ? *opts.initial_guess : ple_guess(phi, intensity);
  const Bounds b{{0.0, 0.0}, {kInf, kInf}};
  auto r = least_squares(ple_model, phi, intensity, guess, {"p1", "p2"}, b, opts.solver);
  r.derived["phi_0"] = 1.0 / r.parameters[1];
  r.derived["saturation"] = r.parameters[0] / r.parameters[1];
  return detail::finish(std::move(r), "ple");
}

}  // namespace purcell
