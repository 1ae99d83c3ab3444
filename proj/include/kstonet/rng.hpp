#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace kstonet {

// Counter-based deterministic RNG. A stream is derived by hashing a root seed
// together with context words (epoch, sample, ...), so per-sample noise is
// identical under any parallel schedule. All draws are pinned to bit-exact
// arithmetic; no standard-library distributions are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Fold context words into a root seed, e.g. derive(root, {epoch, sample}).
  static std::uint64_t derive(std::uint64_t root, std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = mix(root);
    for (std::uint64_t w : words) h = mix(h ^ (w + kGolden));
    return h;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; one spare value is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double two_pi_u2 = 2.0 * 3.141592653589793238462643 * u2;
    spare_ = mag * std::sin(two_pi_u2);
    has_spare_ = true;
    return mag * std::cos(two_pi_u2);
  }

  // Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace kstonet
