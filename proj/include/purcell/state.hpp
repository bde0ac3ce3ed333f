#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace purcell {

using complex = std::complex<double>;

/// Mean-field phase-space point: cavity amplitude a, spin coherences s_-^j
/// and populations s_z^j.
///
/// Stored as one flat real vector of length 2 + 3N so the integrator can work
/// on it directly: [Re a, Im a, Re s_-^0..N-1, Im s_-^0..N-1, s_z^0..N-1].
/// The split real/imaginary blocks keep the per-ion loops contiguous.
class SystemState {
 public:
  SystemState() : data_(2, 0.0) {}

  /// Empty cavity, all ions in the ground state (s_z = -1).
  static SystemState ground(std::size_t n_ions) {
    SystemState s;
    s.n_ = n_ions;
    s.data_.assign(2 + 3 * n_ions, 0.0);
    std::fill(s.data_.begin() + static_cast<std::ptrdiff_t>(2 + 2 * n_ions), s.data_.end(), -1.0);
    return s;
  }

  static SystemState from_flat(std::span<const double> flat) {
    if (flat.size() < 2 || (flat.size() - 2) % 3 != 0)
      throw std::invalid_argument("SystemState: flat vector length must be 2 + 3N");
    SystemState s;
    s.n_ = (flat.size() - 2) / 3;
    s.data_.assign(flat.begin(), flat.end());
    return s;
  }

  [[nodiscard]] std::size_t n_ions() const noexcept { return n_; }
  [[nodiscard]] std::size_t dimension() const noexcept { return data_.size(); }

  [[nodiscard]] complex a() const noexcept { return {data_[0], data_[1]}; }
  void set_a(complex v) noexcept {
    data_[0] = v.real();
    data_[1] = v.imag();
  }

  [[nodiscard]] complex s_minus(std::size_t j) const noexcept { return {data_[2 + j], data_[2 + n_ + j]}; }
  void set_s_minus(std::size_t j, complex v) noexcept {
    data_[2 + j] = v.real();
    data_[2 + n_ + j] = v.imag();
  }

  [[nodiscard]] double s_z(std::size_t j) const noexcept { return data_[2 + 2 * n_ + j]; }
  void set_s_z(std::size_t j, double v) noexcept { data_[2 + 2 * n_ + j] = v; }

  [[nodiscard]] std::span<double> flat() noexcept { return data_; }
  [[nodiscard]] std::span<const double> flat() const noexcept { return data_; }

  /// Total excitation |a|^2 + sum_j (1 + s_z^j)/2.
  [[nodiscard]] double excitation() const noexcept {
    double e = std::norm(a());
    for (std::size_t j = 0; j < n_; ++j) e += 0.5 * (1.0 + s_z(j));
    return e;
  }

  /// max_j 4|s_-^j|^2 + (s_z^j)^2; at most 1 inside the Bloch ball.
  [[nodiscard]] double max_bloch_radius_sq() const noexcept {
    double r = 0.0;
    for (std::size_t j = 0; j < n_; ++j) r = std::max(r, 4.0 * std::norm(s_minus(j)) + s_z(j) * s_z(j));
    return r;
  }

  friend bool operator==(const SystemState&, const SystemState&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

/// Read-only view with the same layout as SystemState, used on integrator
/// buffers without copying.
struct StateView {
  std::span<const double> flat;
  std::size_t n;

  explicit StateView(std::span<const double> f) : flat(f), n((f.size() - 2) / 3) {}
  [[nodiscard]] complex a() const noexcept { return {flat[0], flat[1]}; }
  [[nodiscard]] complex s_minus(std::size_t j) const noexcept { return {flat[2 + j], flat[2 + n + j]}; }
  [[nodiscard]] double s_z(std::size_t j) const noexcept { return flat[2 + 2 * n + j]; }
  [[nodiscard]] double excitation() const noexcept {
    double e = std::norm(a());
    for (std::size_t j = 0; j < n; ++j) e += 0.5 * (1.0 + s_z(j));
    return e;
  }
  [[nodiscard]] double max_bloch_radius_sq() const noexcept {
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j) r = std::max(r, 4.0 * std::norm(s_minus(j)) + s_z(j) * s_z(j));
    return r;
  }
};

/// Sampled solution of one integration phase.
struct Trajectory {
  std::vector<double> times;
  std::vector<SystemState> states;
  bool drive_on = false;

  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
};

/// Disorder-averaged output photon flux on a grid measured from the pulse end.
struct FluorescenceTrace {
  std::vector<double> times;
  std::vector<double> flux;
  int n_traj = 0;

  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
};

}  // namespace purcell
