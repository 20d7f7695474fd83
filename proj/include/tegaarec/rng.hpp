#pragma once

#include <cstdint>
#include <random>

namespace tegaarec {

// splitmix64 finalizer; decorrelates structured seed inputs
inline std::uint64_t hash64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return hash64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t head, Rest... rest) {
  return mix_seed(hash64(seed ^ hash64(head)), rest...);
}

inline std::mt19937_64 make_rng(std::uint64_t mixed) { return std::mt19937_64(mixed); }

}  // namespace tegaarec
