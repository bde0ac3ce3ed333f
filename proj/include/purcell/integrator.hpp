#pragma once

// Dormand-Prince 5(4) embedded Runge-Kutta pair with Hairer's continuous
// extension for dense output on an arbitrary sample grid.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace purcell {

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  ///< 0 selects the step automatically
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 100'000'000;
};

class StiffnessError : public std::runtime_error {
 public:
  StiffnessError(const std::string& what, double time)
      : std::runtime_error(what + " at t = " + std::to_string(time)), time_(time) {}
  [[nodiscard]] double time() const noexcept { return time_; }

 private:
  double time_;
};

struct IntegrationStats {
  long accepted = 0;
  long rejected = 0;
  long rhs_evaluations = 0;
};

namespace dopri {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace dopri

/// Integrates dy/dt = rhs(t, y) from t0 to t1 in place.
///
/// `rhs(double t, const double* y, double* dy)` evaluates the derivative.
/// `observe(double t, std::span<const double> y)` is called once per entry
/// of `sample_times` (which must be non-decreasing and inside [t0, t1]) with
/// the dense-output state; a sample at t1 receives the exact end state.
/// Throws StiffnessError when the step size underflows or the step budget is
/// exhausted.
template <typename Rhs, typename Observer>
IntegrationStats integrate_dense(Rhs&& rhs, double t0, double t1, std::span<double> y,
                                 std::span<const double> sample_times, Observer&& observe,
                                 const IntegratorOptions& opts = {}) {
  using namespace dopri;
  if (!(t1 >= t0)) throw std::invalid_argument("integrate: t1 must not precede t0");
  for (std::size_t i = 0; i < sample_times.size(); ++i) {
    if (sample_times[i] < t0 || sample_times[i] > t1 || (i > 0 && sample_times[i] < sample_times[i - 1]))
      throw std::invalid_argument("integrate: sample grid must be sorted and inside the time span");
  }

  const std::size_t n = y.size();
  IntegrationStats stats;
  std::size_t next_sample = 0;
  auto flush_samples_at = [&](double t, std::span<const double> state) {
    while (next_sample < sample_times.size() && sample_times[next_sample] <= t) {
      observe(sample_times[next_sample], state);
      ++next_sample;
    }
  };

  if (t1 == t0 || n == 0) {
    flush_samples_at(t1, y);
    return stats;
  }

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  std::vector<double> r1(n), r2(n), r3(n), r4(n), r5(n), dense(n);

  double t = t0;
  rhs(t, y.data(), k1.data());
  ++stats.rhs_evaluations;

  // emit samples sitting exactly at t0
  while (next_sample < sample_times.size() && sample_times[next_sample] <= t0) {
    observe(sample_times[next_sample], std::span<const double>(y.data(), n));
    ++next_sample;
  }

  auto scale = [&](double a, double b) { return opts.atol + opts.rtol * std::max(std::abs(a), std::abs(b)); };
  const double span = t1 - t0;

  double h = opts.initial_step;
  if (!(h > 0.0)) {
    // Hairer's starting-step heuristic.
    double dnf = 0.0, dny = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = opts.atol + opts.rtol * std::abs(y[i]);
      dnf += (k1[i] / sk) * (k1[i] / sk);
      dny += (y[i] / sk) * (y[i] / sk);
    }
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, opts.max_step);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * k1[i];
    rhs(t + h, ytmp.data(), k2.data());
    ++stats.rhs_evaluations;
    double der2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = opts.atol + opts.rtol * std::abs(y[i]);
      const double v = (k2[i] - k1[i]) / sk;
      der2 += v * v;
    }
    der2 = std::sqrt(der2 / static_cast<double>(n)) / h;
    const double der12 = std::max(std::abs(der2), std::sqrt(dnf / static_cast<double>(n)));
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.2);
    h = std::min({100.0 * h, h1, opts.max_step});
  }
  h = std::min(h, span);

  constexpr double safety = 0.9, facmin = 0.2, facmax = 10.0, beta = 0.04;
  const double expo = 0.2 - beta * 0.75;
  double facold = 1e-4;
  bool last_rejected = false;

  while (t < t1) {
    if (stats.accepted + stats.rejected >= opts.max_steps)
      throw StiffnessError("integrate: step budget exhausted", t);
    bool last = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      last = true;
    }
    if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
      throw StiffnessError("integrate: step size underflow", t);

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    rhs(t + c2 * h, ytmp.data(), k2.data());
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    rhs(t + c3 * h, ytmp.data(), k3.data());
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    rhs(t + c4 * h, ytmp.data(), k4.data());
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    rhs(t + c5 * h, ytmp.data(), k5.data());
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    const double tph = last ? t1 : t + h;
    rhs(tph, ytmp.data(), k6.data());
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    rhs(tph, ynew.data(), k7.data());
    stats.rhs_evaluations += 6;

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double r = e / scale(y[i], ynew[i]);
      err += r * r;
    }
    err = std::sqrt(err / static_cast<double>(n));

    if (!std::isfinite(err)) {
      ++stats.rejected;
      h *= facmin;
      last_rejected = true;
      continue;
    }

    const double fac11 = std::pow(err, expo);
    double fac = fac11 / std::pow(facold, beta);
    fac = std::clamp(fac / safety, 1.0 / facmax, 1.0 / facmin);
    double hnew = h / fac;

    if (err <= 1.0) {
      facold = std::max(err, 1e-4);
      ++stats.accepted;
      const bool need_dense = next_sample < sample_times.size() && sample_times[next_sample] < tph;
      if (need_dense) {
        for (std::size_t i = 0; i < n; ++i) {
          const double ydiff = ynew[i] - y[i];
          const double bspl = h * k1[i] - ydiff;
          r1[i] = y[i];
          r2[i] = ydiff;
          r3[i] = bspl;
          r4[i] = ydiff - h * k7[i] - bspl;
          r5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
        }
        while (next_sample < sample_times.size() && sample_times[next_sample] < tph) {
          const double theta = (sample_times[next_sample] - t) / h;
          const double theta1 = 1.0 - theta;
          for (std::size_t i = 0; i < n; ++i)
            dense[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
          observe(sample_times[next_sample], std::span<const double>(dense.data(), n));
          ++next_sample;
        }
      }
      std::copy(ynew.begin(), ynew.end(), y.begin());
      std::swap(k1, k7);
      t = tph;
      if (last) t = t1;
      if (std::abs(hnew) > opts.max_step) hnew = opts.max_step;
      if (last_rejected) hnew = std::min(hnew, h);
      last_rejected = false;
      h = hnew;
    } else {
      hnew = h / std::min(1.0 / facmin, fac11 / safety);
      last_rejected = true;
      ++stats.rejected;
      h = hnew;
    }
  }

  flush_samples_at(t1, std::span<const double>(y.data(), n));
  return stats;
}

/// Integration without intermediate samples.
template <typename Rhs>
IntegrationStats integrate_to(Rhs&& rhs, double t0, double t1, std::span<double> y,
                              const IntegratorOptions& opts = {}) {
  return integrate_dense(std::forward<Rhs>(rhs), t0, t1, y, std::span<const double>{},
                         [](double, std::span<const double>) {}, opts);
}

}  // namespace purcell
