#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dopplervel {

// SplitMix64 finalizer (Steele/Lea/Flood). Used only for deriving sub-stream seeds;
// sampling itself runs on std::mt19937_64, which the standard pins bit-exactly.
struct SplitMix64 {
  std::uint64_t state = 0;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

/// Seed-splitting rule: sub-stream `stream` of `seed` is two SplitMix64 steps from
/// seed + (stream+1)·golden_gamma. Streams are independent of execution order, so
/// parallel sweep rows reproduce serial output bit for bit.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 sm{seed + 0x9E3779B97F4A7C15ull * (stream + 1)};
  sm.next();
  return sm.next();
}

// Uniform on (0,1]: top 53 bits of the engine word, offset so 0 is excluded.
inline double uniform_open(std::mt19937_64& eng) {
  return (static_cast<double>(eng() >> 11) + 1.0) * 0x1.0p-53;
}

inline double exponential_sample(std::mt19937_64& eng, double rate) {
  return -std::log(uniform_open(eng)) / rate;
}

} // namespace dopplervel
