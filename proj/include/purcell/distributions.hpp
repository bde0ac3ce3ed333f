#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace purcell {

/// Cauchy density h / (pi [(x - center)^2 + h^2]); FWHM is 2h.
inline double lorentzian_pdf(double x, double center, double half_width) {
  if (!(half_width > 0.0)) throw std::domain_error("lorentzian_pdf: half-width must be positive");
  const double dx = x - center;
  return half_width / (std::numbers::pi * (dx * dx + half_width * half_width));
}

inline double gaussian_pdf(double x, double mean, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("gaussian_pdf: sigma must be positive");
  const double z = (x - mean) / sigma;
  return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

inline double lorentzian_cdf(double x, double center, double half_width) {
  if (!(half_width > 0.0)) throw std::domain_error("lorentzian_cdf: half-width must be positive");
  return 0.5 + std::atan((x - center) / half_width) / std::numbers::pi;
}

inline double gaussian_cdf(double x, double mean, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("gaussian_cdf: sigma must be positive");
  return 0.5 * std::erfc(-(x - mean) / (sigma * std::numbers::sqrt2));
}

/// Inverse CDF of the Cauchy distribution, u in (0, 1).
inline double lorentzian_quantile(double u, double center, double half_width) {
  return center + half_width * std::tan(std::numbers::pi * (u - 0.5));
}

/// CDF of a centered Cauchy distribution conditioned on |x| <= cut.
inline double truncated_lorentzian_cdf(double x, double half_width, double cut) {
  if (!std::isfinite(cut)) return lorentzian_cdf(x, 0.0, half_width);
  if (x <= -cut) return 0.0;
  if (x >= cut) return 1.0;
  const double lo = lorentzian_cdf(-cut, 0.0, half_width);
  const double hi = lorentzian_cdf(cut, 0.0, half_width);
  return (lorentzian_cdf(x, 0.0, half_width) - lo) / (hi - lo);
}

}  // namespace purcell
