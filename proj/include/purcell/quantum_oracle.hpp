#pragma once

// Exact Lindblad master-equation solution for at most two ions in a
// truncated Fock space. Used as a reference for the mean-field equations.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "purcell/dynamics.hpp"
#include "purcell/integrator.hpp"
#include "purcell/params.hpp"

namespace purcell {

class TruncationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleOptions {
  int fock_cutoff = 8;
  double samples_per_unit = 1.0;
  bool include_decay = false;  ///< continue with the drive off for t_decay
  double truncation_threshold = 1e-8;
  IntegratorOptions integrator{1e-10, 1e-12};
};

struct OracleSample {
  double time = 0.0;  ///< measured from the start of the pulse
  bool drive_on = true;
  complex a{};
  std::vector<double> s_z;
  std::vector<complex> s_minus;
  double trace = 1.0;
  double min_eigenvalue = 0.0;
  double top_fock_population = 0.0;
};

struct OracleTrace {
  std::vector<OracleSample> samples;
  int fock_cutoff = 0;
  int hilbert_dimension = 0;
};

namespace detail {

using CMatrix = Eigen::MatrixXcd;

inline CMatrix kron(const CMatrix& A, const CMatrix& B) {
  CMatrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

/// Operators on cavity (x) spin_0 (x) ... (x) spin_{N-1}.
struct OracleOperators {
  CMatrix a;
  std::vector<CMatrix> sigma_minus;
  std::vector<CMatrix> sigma_z;
  CMatrix top_projector;
};

inline OracleOperators build_operators(int cutoff, std::size_t n_ions) {
  const int nc = cutoff + 1;
  CMatrix a_c = CMatrix::Zero(nc, nc);
  for (int n = 1; n < nc; ++n) a_c(n - 1, n) = std::sqrt(static_cast<double>(n));
  CMatrix top = CMatrix::Zero(nc, nc);
  top(nc - 1, nc - 1) = 1.0;
  // spin basis {|g>, |e>}
  CMatrix sm = CMatrix::Zero(2, 2);
  sm(0, 1) = 1.0;
  CMatrix sz = CMatrix::Zero(2, 2);
  sz(0, 0) = -1.0;
  sz(1, 1) = 1.0;
  const CMatrix id2 = CMatrix::Identity(2, 2);

  auto embed = [&](const CMatrix& cavity_op, std::size_t spin, const CMatrix& spin_op) {
    CMatrix out = cavity_op;
    for (std::size_t j = 0; j < n_ions; ++j) out = kron(out, j == spin ? spin_op : id2);
    return out;
  };
  OracleOperators ops;
  const CMatrix id_c = CMatrix::Identity(nc, nc);
  ops.a = embed(a_c, n_ions, id2);
  ops.top_projector = embed(top, n_ions, id2);
  for (std::size_t j = 0; j < n_ions; ++j) {
    ops.sigma_minus.push_back(embed(id_c, j, sm));
    ops.sigma_z.push_back(embed(id_c, j, sz));
  }
  return ops;
}

class LindbladRhs {
 public:
  LindbladRhs(const OracleOperators& ops, const DisorderRealization& realization, const ModelParams& params,
              bool drive_on)
      : dim_(ops.a.rows()) {
    const CMatrix ad = ops.a.adjoint();
    CMatrix H = params.delta_c * ad * ops.a;
    for (std::size_t j = 0; j < realization.size(); ++j) {
      const auto& ion = realization.ions[j];
      H += 0.5 * ion.delta * ops.sigma_z[j];
      H += ion.g * (ad * ops.sigma_minus[j] + ops.a * ops.sigma_minus[j].adjoint());
    }
    if (drive_on) H += complex(0.0, -std::sqrt(params.kappa_c) * params.beta_in) * (ad - ops.a);

    jumps_.push_back(std::sqrt(params.kappa) * ops.a);
    for (const auto& sm : ops.sigma_minus) jumps_.push_back(std::sqrt(params.gamma) * sm);
    CMatrix loss = CMatrix::Zero(dim_, dim_);
    for (const auto& L : jumps_) loss += L.adjoint() * L;
    h_eff_ = H - complex(0.0, 0.5) * loss;
    for (const auto& L : jumps_) jumps_adj_.push_back(L.adjoint());
  }

  void operator()(double /*t*/, const double* y, double* dy) const {
    Eigen::Map<const CMatrix> rho(reinterpret_cast<const complex*>(y), dim_, dim_);
    Eigen::Map<CMatrix> out(reinterpret_cast<complex*>(dy), dim_, dim_);
    const complex minus_i(0.0, -1.0);
    out.noalias() = minus_i * (h_eff_ * rho);
    out.noalias() += complex(0.0, 1.0) * (rho * h_eff_.adjoint());
    for (std::size_t k = 0; k < jumps_.size(); ++k) out.noalias() += jumps_[k] * rho * jumps_adj_[k];
  }

 private:
  Eigen::Index dim_;
  CMatrix h_eff_;
  std::vector<CMatrix> jumps_, jumps_adj_;
};

}  // namespace detail

/// Integrates the master equation from the vacuum / ground state with the
/// drive on for t_pulse (and optionally off for t_decay), returning
/// expectation values on a uniform grid.
///
/// Throws std::invalid_argument for more than two ions and TruncationError
/// when the highest Fock level carries more than `truncation_threshold`.
inline OracleTrace quantum_oracle(const ModelParams& params, const DisorderRealization& realization,
                                  const OracleOptions& opts = {}) {
  if (realization.size() > 2)
    throw std::invalid_argument("quantum_oracle: exact solution is limited to at most 2 ions (got " +
                                std::to_string(realization.size()) + ")");
  if (opts.fock_cutoff < 1) throw std::invalid_argument("quantum_oracle: fock_cutoff must be >= 1");

  const auto ops = detail::build_operators(opts.fock_cutoff, realization.size());
  const Eigen::Index dim = ops.a.rows();
  detail::CMatrix rho = detail::CMatrix::Zero(dim, dim);
  rho(0, 0) = 1.0;  // vacuum, all spins in |g>
  std::vector<double> flat(2 * static_cast<std::size_t>(dim * dim));
  std::copy_n(reinterpret_cast<const double*>(rho.data()), flat.size(), flat.begin());

  OracleTrace trace;
  trace.fock_cutoff = opts.fock_cutoff;
  trace.hilbert_dimension = static_cast<int>(dim);

  auto record = [&](double t_offset, bool drive_on) {
    return [&, t_offset, drive_on](double t, std::span<const double> y) {
      Eigen::Map<const detail::CMatrix> r(reinterpret_cast<const complex*>(y.data()), dim, dim);
      OracleSample s;
      s.time = t_offset + t;
      s.drive_on = drive_on;
      s.a = (ops.a * r).trace();
      for (std::size_t j = 0; j < realization.size(); ++j) {
        s.s_z.push_back((ops.sigma_z[j] * r).trace().real());
        s.s_minus.push_back((ops.sigma_minus[j] * r).trace());
      }
      s.trace = r.trace().real();
      s.top_fock_population = (ops.top_projector * r).trace().real();
      const detail::CMatrix herm = 0.5 * (r + r.adjoint());
      Eigen::SelfAdjointEigenSolver<detail::CMatrix> eig(herm, Eigen::EigenvaluesOnly);
      s.min_eigenvalue = eig.eigenvalues().minCoeff();
      if (s.top_fock_population > opts.truncation_threshold)
        throw TruncationError("quantum_oracle: Fock cutoff " + std::to_string(opts.fock_cutoff) +
                              " too small, top-level population " + std::to_string(s.top_fock_population) +
                              " at t = " + std::to_string(s.time));
      trace.samples.push_back(std::move(s));
    };
  };

  if (params.t_pulse > 0.0) {
    const auto grid = uniform_grid(params.t_pulse, opts.samples_per_unit);
    integrate_dense(detail::LindbladRhs(ops, realization, params, true), 0.0, params.t_pulse, flat, grid,
                    record(0.0, true), opts.integrator);
  }
  if (opts.include_decay) {
    auto grid = uniform_grid(params.t_decay, opts.samples_per_unit);
    grid.erase(grid.begin());  // pulse end already recorded
    integrate_dense(detail::LindbladRhs(ops, realization, params, false), 0.0, params.t_decay, flat, grid,
                    record(params.t_pulse, false), opts.integrator);
  }
  return trace;
}

/// Mean-field trajectory on the same grid as quantum_oracle.
inline std::vector<std::pair<double, SystemState>> mean_field_reference(const ModelParams& params,
                                                                       const DisorderRealization& realization,
                                                                       const OracleOptions& opts = {},
                                                                       const IntegratorOptions& mf = {}) {
  std::vector<std::pair<double, SystemState>> out;
  SystemState state = SystemState::ground(realization.size());
  if (params.t_pulse > 0.0) {
    const auto grid = uniform_grid(params.t_pulse, opts.samples_per_unit);
    integrate_dense(FullRhs(realization, params, true), 0.0, params.t_pulse, state.flat(), grid,
                    [&](double t, std::span<const double> y) { out.emplace_back(t, SystemState::from_flat(y)); }, mf);
  }
  if (opts.include_decay) {
    auto grid = uniform_grid(params.t_decay, opts.samples_per_unit);
    grid.erase(grid.begin());
    integrate_dense(FullRhs(realization, params, false), 0.0, params.t_decay, state.flat(), grid,
                    [&](double t, std::span<const double> y) {
                      out.emplace_back(params.t_pulse + t, SystemState::from_flat(y));
                    },
                    mf);
  }
  return out;
}

/// Side-by-side oracle and mean-field expectation values on a common grid.
struct OracleComparisonRow {
  double time = 0.0;
  double oracle_abs_a = 0.0, mean_field_abs_a = 0.0;
  std::vector<double> oracle_s_z, mean_field_s_z;
  double rel_dev_a = 0.0;   ///< |mf - oracle| / |oracle| for |a|
  double rel_dev_s_z = 0.0; ///< max over ions, same definition
  double trace = 1.0;
  double min_eigenvalue = 0.0;
};

struct OracleComparison {
  std::vector<OracleComparisonRow> rows;
  double max_rel_dev_a = 0.0;
  double max_rel_dev_s_z = 0.0;
  double max_trace_deviation = 0.0;
  double min_eigenvalue = 0.0;

  [[nodiscard]] double max_rel_dev() const { return std::max(max_rel_dev_a, max_rel_dev_s_z); }
};

namespace detail {

/// Relative deviation; samples where both values vanish count as agreement.
inline double relative_deviation(double approx, double exact) {
  const double diff = std::abs(approx - exact);
  if (diff == 0.0) return 0.0;
  if (std::abs(exact) < 1e-12) return std::abs(approx) < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / std::abs(exact);
}

}  // namespace detail

inline OracleComparison compare_oracle_mean_field(const ModelParams& params, const DisorderRealization& realization,
                                                  const OracleOptions& opts = {}, const IntegratorOptions& mf = {}) {
  const auto exact = quantum_oracle(params, realization, opts);
  const auto approx = mean_field_reference(params, realization, opts, mf);
  if (exact.samples.size() != approx.size()) throw std::logic_error("oracle and mean-field grids differ");
  OracleComparison out;
  out.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const auto& e = exact.samples[i];
    const auto& [t, state] = approx[i];
    OracleComparisonRow row;
    row.time = e.time;
    row.oracle_abs_a = std::abs(e.a);
    row.mean_field_abs_a = std::abs(state.a());
    row.rel_dev_a = detail::relative_deviation(row.mean_field_abs_a, row.oracle_abs_a);
    for (std::size_t j = 0; j < realization.size(); ++j) {
      row.oracle_s_z.push_back(e.s_z[j]);
      row.mean_field_s_z.push_back(state.s_z(j));
      row.rel_dev_s_z = std::max(row.rel_dev_s_z, detail::relative_deviation(state.s_z(j), e.s_z[j]));
    }
    row.trace = e.trace;
    row.min_eigenvalue = e.min_eigenvalue;
    out.max_rel_dev_a = std::max(out.max_rel_dev_a, row.rel_dev_a);
    out.max_rel_dev_s_z = std::max(out.max_rel_dev_s_z, row.rel_dev_s_z);
    out.max_trace_deviation = std::max(out.max_trace_deviation, std::abs(e.trace - 1.0));
    out.min_eigenvalue = std::min(out.min_eigenvalue, e.min_eigenvalue);
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace purcell
