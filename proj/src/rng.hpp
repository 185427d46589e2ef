#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace argus {

// splitmix64, used to derive independent substream seeds from a base seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for a named substream. Same (base, tag, index) always gives the same
// stream, and distinct tags give unrelated streams, so per-scene / per-object
// draws stay independent of iteration order.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
  uint64_t h = base;
  for (char c : tag) h = splitmix64(h ^ static_cast<uint8_t>(c));
  return splitmix64(h ^ index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t base, std::string_view tag, uint64_t index = 0) {
  return Rng(derive_seed(base, tag, index));
}

template <typename T = double>
inline T uniform(Rng& rng, T lo = 0, T hi = 1) {
  return std::uniform_real_distribution<T>(lo, hi)(rng);
}

template <typename T = double>
inline T normal(Rng& rng, T mean = 0, T stddev = 1) {
  return std::normal_distribution<T>(mean, stddev)(rng);
}

inline int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {  // inclusive
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

}  // namespace argus
