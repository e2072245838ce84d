#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sodarec {

// Seeded RNG with hand-rolled distributions. The mt19937_64 stream is fully
// specified by the standard; std::normal_distribution and std::shuffle are not,
// so we implement the few transforms we need on top of the raw stream to keep
// runs bit-reproducible under a fixed seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Derives an independent stream seed (splitmix64 finalizer over seed ^ stream).
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi] inclusive, by rejection on a bitmask.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) {
      return static_cast<int64_t>(next_u64());  // full 64-bit range
    }
    uint64_t mask = ~0ull;
    if (range < (1ull << 63)) {
      mask = (1ull << bit_width_(range)) - 1;
    }
    uint64_t v;
    do {
      v = next_u64() & mask;
    } while (v >= range);
    return lo + static_cast<int64_t>(v);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller with cached spare.
  double normal(double mu = 0.0, double sd = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + spare_ * sd;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mu + r * std::cos(theta) * sd;
  }

  // Fisher-Yates.
  template <typename V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static int bit_width_(uint64_t x) {
    int w = 0;
    while (x > 0) {
      ++w;
      x >>= 1;
    }
    return w;
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sodarec
