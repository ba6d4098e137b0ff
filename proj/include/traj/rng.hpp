#pragma once

#include <cmath>
#include <cstdint>

namespace traj {

// splitmix64, used to expand seeds into well-mixed streams.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ — portable, seedable generator. All randomness in the
// project (scenario sampling, parameter init, dropout masks) goes
// through this so runs are reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  // Derive an independent stream from a base seed and salt words.
  static Rng derive(uint64_t seed, uint64_t salt0, uint64_t salt1 = 0, uint64_t salt2 = 0) {
    uint64_t sm = seed;
    uint64_t mixed = splitmix64(sm);
    sm = mixed ^ (salt0 * 0x9e3779b97f4a7c15ULL);
    mixed = splitmix64(sm);
    sm = mixed ^ (salt1 * 0xd1b54a32d192ed03ULL);
    mixed = splitmix64(sm);
    sm = mixed ^ (salt2 * 0x2545f4914f6cdd1dULL);
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller (spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace traj
