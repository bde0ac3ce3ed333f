#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace purcell {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: independent of how many other streams
/// were drawn before, so realizations can be sampled in any order.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                           std::uint64_t stream = 0) noexcept {
  return splitmix64(splitmix64(master ^ splitmix64(index + 1)) + stream);
}

enum class Substream : std::uint64_t { detunings = 1, couplings = 2, noise = 3 };

/// mt19937_64 plus hand-written variate transforms. The std distributions are
/// implementation-defined, which would break bit-reproducibility across
/// standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phase = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(phase);
    has_spare_ = true;
    return r * std::cos(phase);
  }

  std::uint64_t next_u64() noexcept { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace purcell
