#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedsim {

// Deterministic PRNG. The engine (mt19937_64) is fully specified by the
// standard and the distributions are hand-rolled, so identical seeds give
// bit-identical streams on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n). Modulo bias is negligible for n far below 2^64.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller, no cached spare so the stream stays position-independent.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1), Marsaglia-Tsang.
  double gamma(double shape);

  std::vector<double> dirichlet(double alpha, int n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(i + 1)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Seed derivation for per-(client, round, step, ...) streams.
inline uint64_t hash_mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

inline uint64_t seed_for(uint64_t base, uint64_t a, uint64_t b = 0,
                         uint64_t c = 0) {
  uint64_t h = hash_mix(base, a);
  h = hash_mix(h, b);
  return hash_mix(h, c);
}

}  // namespace fedsim
