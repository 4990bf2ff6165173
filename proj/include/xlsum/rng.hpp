#pragma once

// Seed derivation and sampling helpers with fixed, library-independent
// semantics so that outputs are identical across standard libraries.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace xlsum {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and purpose/index tags.
inline std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline double uniform01(Rng& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

// Uniform integer in [0, n), unbiased.
inline std::uint64_t uniform_below(Rng& gen, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t x;
  do {
    x = gen();
  } while (x >= limit);
  return x % n;
}

inline std::uint64_t uniform_between(Rng& gen, std::uint64_t lo, std::uint64_t hi) {
  return lo + uniform_below(gen, hi - lo + 1);
}

template <typename Vec>
void shuffle_in_place(Vec& v, Rng& gen) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(gen, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace xlsum
