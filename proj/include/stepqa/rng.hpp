#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stepqa {

// Deterministic random source. mt19937_64 is fully specified by the standard;
// the derived draws below are spelled out here (rather than using the
// implementation-defined std distributions) so that a seed pins byte-identical
// outputs across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller (no spare caching).
  double gaussian() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    constexpr double two_pi = 6.283185307179586476925287;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  std::size_t uniform_below(std::size_t n) {
    return static_cast<std::size_t>(engine_() % static_cast<std::uint64_t>(n));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_below(i)]);
    }
  }

  std::vector<double> gaussian_vector(std::size_t n, double sigma = 1.0) {
    std::vector<double> out(n);
    for (auto& x : out) x = sigma * gaussian();
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stepqa
