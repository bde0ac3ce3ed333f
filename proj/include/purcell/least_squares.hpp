#pragma once

// Levenberg-Marquardt nonlinear least squares with a forward-difference
// Jacobian and box bounds enforced by projection.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace purcell {

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  std::vector<double> parameters;
  /// sqrt(diag(s^2 (J^T J)^-1)); empty unless converged
  std::vector<double> parameter_errors;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
  std::vector<bool> at_bound;
  /// residual norm before the first and after every accepted iteration
  std::vector<double> residual_history;
  /// quantities computed from the parameters (FWHM, phi_0, splitting, ...)
  std::map<std::string, double> derived;
  std::optional<std::pair<double, double>> window;

  [[nodiscard]] double value(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return parameters[i];
    if (auto it = derived.find(name); it != derived.end()) return it->second;
    throw std::out_of_range("FitResult: no parameter named '" + name + "'");
  }

  [[nodiscard]] bool any_at_bound() const {
    return std::any_of(at_bound.begin(), at_bound.end(), [](bool b) { return b; });
  }

  /// Converged and not pinned to a bound.
  [[nodiscard]] bool ok() const { return converged && !any_at_bound(); }
};

struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  static Bounds unbounded(std::size_t n) {
    return {std::vector<double>(n, -std::numeric_limits<double>::infinity()),
            std::vector<double>(n, std::numeric_limits<double>::infinity())};
  }
};

struct LeastSquaresOptions {
  int max_iterations = 500;
  double xtol = 1e-10;        ///< relative parameter change
  double gtol = 1e-12;        ///< infinity norm of J^T r
  double ftol = 1e-12;        ///< relative cost reduction of a lightly damped step
  double fd_step = 1e-7;      ///< relative finite-difference step
  double singular_rcond = 1e-14;
  std::vector<double> weights;  ///< per-sample weights on squared residuals; empty = unweighted
};

using ModelFunction = std::function<double(double x, std::span<const double> p)>;

/// Minimizes sum_i w_i (y_i - model(x_i, p))^2 over p inside `bounds`.
///
/// Throws std::domain_error if the model returns a non-finite value and
/// std::invalid_argument on malformed input. Singular normal equations at
/// the solution give a non-converged result with a diagnostic message.
inline FitResult least_squares(const ModelFunction& model, std::span<const double> x, std::span<const double> y,
                               std::vector<double> initial, std::vector<std::string> names,
                               std::optional<Bounds> bounds = std::nullopt, const LeastSquaresOptions& opts = {}) {
  const auto m = static_cast<Eigen::Index>(x.size());
  const auto n = static_cast<Eigen::Index>(initial.size());
  if (x.size() != y.size()) throw std::invalid_argument("least_squares: x and y differ in length");
  if (m < n) throw std::invalid_argument("least_squares: fewer samples than parameters");
  if (names.size() != initial.size()) throw std::invalid_argument("least_squares: one name per parameter");
  if (!opts.weights.empty() && opts.weights.size() != x.size())
    throw std::invalid_argument("least_squares: weights must match the samples");
  const Bounds bnd = bounds.value_or(Bounds::unbounded(initial.size()));
  if (bnd.lower.size() != initial.size() || bnd.upper.size() != initial.size())
    throw std::invalid_argument("least_squares: bounds must match the parameters");

  Eigen::VectorXd sw(m);
  for (Eigen::Index i = 0; i < m; ++i)
    sw(i) = opts.weights.empty() ? 1.0 : std::sqrt(opts.weights[static_cast<std::size_t>(i)]);

  auto project = [&](Eigen::VectorXd& p) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      p(k) = std::clamp(p(k), bnd.lower[ku], bnd.upper[ku]);
    }
  };
  auto residuals = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    const std::span<const double> ps(p.data(), static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < m; ++i) {
      const double f = model(x[static_cast<std::size_t>(i)], ps);
      if (!std::isfinite(f))
        throw std::domain_error("least_squares: model returned a non-finite value at x = " +
                                std::to_string(x[static_cast<std::size_t>(i)]));
      r(i) = sw(i) * (y[static_cast<std::size_t>(i)] - f);
    }
  };
  // J_ik = d model(x_i) / d p_k, weighted
  auto jacobian = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    Eigen::VectorXd pp = p, rr(m);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      double h = opts.fd_step * std::max(std::abs(p(k)), 1e-8);
      if (p(k) + h > bnd.upper[ku]) h = -h;
      pp(k) = p(k) + h;
      residuals(pp, rr);
      J.col(k) = (r - rr) / h;
      pp(k) = p(k);
    }
  };

  FitResult out;
  out.names = std::move(names);
  Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(initial.data(), n);
  project(p);
  Eigen::VectorXd r(m), r_trial(m);
  Eigen::MatrixXd J(m, n);
  residuals(p, r);
  double cost = r.squaredNorm();
  out.residual_history.push_back(std::sqrt(cost));

  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    jacobian(p, r, J);
    const Eigen::VectorXd grad = J.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < opts.gtol) {
      converged = true;
      out.message = "gradient tolerance reached";
      break;
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    bool accepted = false;
    bool stalled = false;
    while (!accepted) {
      Eigen::MatrixXd A = JtJ;
      for (Eigen::Index k = 0; k < n; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-300);
      const Eigen::VectorXd step = A.ldlt().solve(grad);
      Eigen::VectorXd trial = p + step;
      project(trial);
      const Eigen::VectorXd actual = trial - p;
      if (!actual.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e16) {
          stalled = true;
          out.message = "damping limit reached";
          break;
        }
        continue;
      }
      if (actual.norm() <= opts.xtol * (p.norm() + opts.xtol)) {
        residuals(trial, r_trial);
        const bool improves = r_trial.squaredNorm() <= cost;
        if (improves) {
          p = trial;
          r = r_trial;
          cost = r_trial.squaredNorm();
          out.residual_history.push_back(std::sqrt(cost));
          // a heavily damped step is short without being at the optimum
          if (lambda > 1e-2) {
            lambda = std::max(lambda / 10.0, 1e-12);
            accepted = true;
            continue;
          }
        }
        converged = true;
        stalled = true;
        out.message = "parameter tolerance reached";
        break;
      }
      residuals(trial, r_trial);
      const double trial_cost = r_trial.squaredNorm();
      if (trial_cost <= cost) {
        accepted = true;
        const bool stagnant = lambda <= 1e-2 && cost - trial_cost <= opts.ftol * cost;
        p = trial;
        r = r_trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        out.residual_history.push_back(std::sqrt(cost));
        if (cost == 0.0) {
          converged = true;
          out.message = "exact fit";
        } else if (stagnant) {
          converged = true;
          out.message = "cost reduction below tolerance";
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          stalled = true;
          out.message = "damping limit reached";
          converged = grad.lpNorm<Eigen::Infinity>() < std::sqrt(opts.gtol);
          break;
        }
      }
    }
    if (stalled) {
      ++it;
      break;
    }
    if (converged) {
      ++it;
      break;
    }
  }
  if (!converged && out.message.empty()) out.message = "iteration limit reached";

  out.iterations = it;
  out.parameters.assign(p.data(), p.data() + n);
  out.residual_norm = std::sqrt(cost);
  out.at_bound.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    auto near = [&](double b) { return std::isfinite(b) && std::abs(p(k) - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    out.at_bound[ku] = near(bnd.lower[ku]) || near(bnd.upper[ku]);
  }

  // Identifiability check on the column-scaled normal equations.
  jacobian(p, r, J);
  Eigen::VectorXd col_norm = J.colwise().norm().transpose();
  bool singular = (col_norm.array() == 0.0).any();
  if (!singular) {
    const Eigen::MatrixXd Js = J * col_norm.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Js.transpose() * Js, Eigen::EigenvaluesOnly);
    const double emax = eig.eigenvalues().maxCoeff();
    const double emin = eig.eigenvalues().minCoeff();
    singular = !(emin > opts.singular_rcond * emax);
  }
  if (singular) {
    converged = false;
    out.message = "singular normal equations (parameters not identifiable)";
  }
  out.converged = converged;

  if (converged) {
    const double dof = static_cast<double>(m - n);
    const double s2 = dof > 0.0 ? cost / dof : 0.0;
    const Eigen::MatrixXd cov = (J.transpose() * J).inverse() * s2;
    out.parameter_errors.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) out.parameter_errors[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, cov(k, k)));
  }
  return out;
}

}  // namespace purcell
