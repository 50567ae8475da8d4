#pragma once
// Deterministic, serializable RNG. splitmix64 core; all stochastic behavior in
// the project flows through this so runs are bit-reproducible across builds
// (std:: distributions are implementation-defined and unusable for that).
#include <cmath>
#include <cstdint>

namespace strata {

struct Rng {
  uint64_t state = 0x9e3779b97f4a7c15ull;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed + 0x9e3779b97f4a7c15ull) {}

  uint64_t u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0,1)
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no cached spare: one normal costs two uniforms but the state
  // stays a single u64, which keeps checkpointed RNG state trivial.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // [0, n)
  int64_t randint(int64_t n) { return int64_t(u64() % uint64_t(n)); }

  // Stateless stream derivation: child streams for (seed, step, tag) so resumed
  // runs regenerate identical batches/noise without replaying history.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    return z ^ (z >> 27);
  }
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return Rng(mix(mix(seed, a), b));
  }
};

}  // namespace strata
