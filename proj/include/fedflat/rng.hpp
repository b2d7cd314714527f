#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedflat {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a tuple of keys.
/// Used to key RNG streams by (seed, round, client, purpose) so that clients
/// can run in any order or concurrently without sharing generator state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng{derive_seed(seed, keys)};
}

/// Stream purposes, mixed into derive_seed keys.
enum class Stream : std::uint64_t {
  init = 1,
  partition = 2,
  sampling = 3,
  client = 4,
  synth_means = 5,
  synth_samples = 6,
  probe = 7,
  directions = 8,
};

inline std::uint64_t key(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace fedflat
