// Seedable random streams with portable output (no implementation-defined
// distribution wrappers, so identical seeds give identical streams on any
// conforming standard library).
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace qlut {

// splitmix64 step, used for deriving child stream seeds from a root seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic child seed: hash of (root, tag).
inline std::uint64_t child_seed(std::uint64_t root, std::uint64_t tag) {
  std::uint64_t s = root ^ (0x632be59bd9b4e019ULL * (tag + 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1): 53 random mantissa bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection to kill modulo bias; n is tiny in this codebase.
    std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli() { return (gen_() >> 63) != 0; }

  // Standard normal via Marsaglia polar method (no std::normal_distribution,
  // whose output is implementation-defined).
  double gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace qlut
