#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace feddrift::rng {

// Deterministic randomness utilities. std::mt19937_64 is bit-exact across
// platforms, but the standard distributions are not, so every draw below is
// built directly on the raw engine output. Frozen test values depend on this.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent seed for a named stream of a master seed.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix(mix(seed, a), b);
}

inline std::mt19937_64 engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(g);
}

/// Unbiased uniform integer in [0, n). n must be nonzero.
inline std::uint64_t uniform_below(std::mt19937_64& g, std::uint64_t n) {
  // Lemire's multiply-shift rejection method.
  for (;;) {
    std::uint64_t x = g();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      std::uint64_t threshold = (0 - n) % n;
      if (low < threshold) continue;
    }
    return static_cast<std::uint64_t>(m >> 64);
  }
}

/// Uniform integer in the closed range [lo, hi].
inline int uniform_int(std::mt19937_64& g, int lo, int hi) {
  return lo + static_cast<int>(uniform_below(g, static_cast<std::uint64_t>(hi - lo) + 1));
}

/// Fisher-Yates shuffle driven by uniform_below.
template <typename T>
void shuffle(std::vector<T>& values, std::mt19937_64& g) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(g, i));
    using std::swap;
    swap(values[i - 1], values[j]);
  }
}

}  // namespace feddrift::rng
