#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace wbx {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// bit-identical across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; draws two uniforms per call, second value discarded.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Beta(a, a) via Johnk's algorithm in log space; exact for small shape
  // parameters where U^(1/a) underflows.
  double beta_symmetric(double a) {
    for (;;) {
      double u = uniform(), v = uniform();
      while (u <= 0.0) u = uniform();
      while (v <= 0.0) v = uniform();
      const double lx = std::log(u) / a;
      const double ly = std::log(v) / a;
      const double m = lx > ly ? lx : ly;
      const double sum = std::exp(lx - m) + std::exp(ly - m);
      if (m + std::log(sum) <= 0.0)
        return 1.0 / (1.0 + std::exp(ly - lx));
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_[4];
};

// Derives an independent named stream from a master seed. Used to give every
// consumer (init, shuffle, augmentation, dropout, ...) its own generator so
// adding a draw in one place never shifts another.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
  for (const char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  uint64_t x = master ^ h;
  x += 0x9e3779b97f4a7c15ULL * (index + 1);
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng derive_rng(uint64_t master, std::string_view tag, uint64_t index = 0) {
  return Rng(derive_seed(master, tag, index));
}

}  // namespace wbx
