#pragma once

// Deterministic random source. std:: distributions are implementation-defined,
// so synthesis, weight init, and epoch shuffles all draw from this generator
// to keep runs bit-reproducible across platforms.

#include <cmath>
#include <cstdint>
#include <vector>

namespace baformer {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Counter-style construction: an independent stream per (seed, stream) pair.
  Rng(uint64_t seed, uint64_t stream) : state_(seed ^ (mix(stream) | 1)) {}

  uint64_t next_u64() {
    // splitmix64
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n >= 1.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u = 1.0 - uniform01();  // (0, 1]
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double twopi_v = 6.283185307179586 * v;
    spare_ = r * std::sin(twopi_v);
    has_spare_ = true;
    return r * std::cos(twopi_v);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace baformer
