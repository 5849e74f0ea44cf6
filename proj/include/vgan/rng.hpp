#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace vgan {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mix a root seed with ids (volume id, stack index, ...) into an independent key.
inline uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> ids) {
  uint64_t h = splitmix64(seed);
  for (uint64_t id : ids) h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

// Counter-based stream: draw n depends only on (key, n), never on call order
// or on which worker asks.
class CounterStream {
 public:
  explicit CounterStream(uint64_t key) : key_(key) {}

  uint64_t bits(uint64_t counter) const { return splitmix64(key_ ^ splitmix64(counter)); }

  // Uniform in [0, 1).
  double uniform(uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }
  double uniform(uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  // Standard normal via Box-Muller over counters 2n and 2n+1.
  double normal(uint64_t n) const {
    const double u1 = 1.0 - uniform(2 * n);  // (0, 1]
    const double u2 = uniform(2 * n + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  uint64_t key_;
};

}  // namespace vgan
