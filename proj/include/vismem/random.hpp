#pragma once

#include <cstdint>
#include <random>

namespace vismem {

using Engine = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double unit_double(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline std::size_t uniform_index(Engine& rng, std::size_t n) {
  return static_cast<std::size_t>(unit_double(rng) * static_cast<double>(n));
}

// splitmix64 finalizer over (seed, stream): independent child seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace vismem
