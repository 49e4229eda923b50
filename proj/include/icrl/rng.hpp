#pragma once
#include <cstdint>
#include <initializer_list>
#include <random>

namespace icrl {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives one stream seed from a list of components (run seed, step index,
// query index, ...). Stable across platforms.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x2545f4914f6cdd1dULL;
  std::uint64_t acc = 0;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL;
    acc = splitmix64(state) ^ (acc * 0x100000001b3ULL);
  }
  return acc;
}

// mt19937_64 wrapper producing uniform doubles without touching the
// implementation-defined std distributions, so draws are reproducible
// everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  std::uint64_t bits() { return gen_(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; all our n are tiny.
    return gen_() % n;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace icrl
