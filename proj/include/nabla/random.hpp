#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace nabla {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Reproducible generator; (seed, stream) pairs give independent trials.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : eng_(splitmix64(seed ^ splitmix64(stream + 1))) {}

  double uniform(double a = 0.0, double b = 1.0) { return a + (b - a) * unit(); }

  double normal() {
    // Box-Muller; avoids implementation-defined std::normal_distribution
    double u1 = unit(), u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::complex<double> cnormal() { return {normal(), normal()}; }

  int integer(int lo, int hi) { return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1)); }

  std::uint64_t next() { return eng_(); }

 private:
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 eng_;
};

}  // namespace nabla
