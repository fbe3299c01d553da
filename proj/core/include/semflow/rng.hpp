#ifndef SEMFLOW_RNG_HPP
#define SEMFLOW_RNG_HPP

#include <cmath>
#include <cstdint>

namespace semflow {

/// Deterministic splitmix64/xoshiro-style generator with explicit
/// distributions, so seeds reproduce bit-identical streams on every
/// platform and standard-library version.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so nearby seeds decorrelate.
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derive an independent child stream, e.g. per epoch or per item.
  Rng fork(std::uint64_t salt) const {
    return Rng(state_ ^ (0x632be59bd9b4e019ull * (salt + 1)));
  }

private:
  std::uint64_t state_;
};

}  // namespace semflow

#endif  // SEMFLOW_RNG_HPP
