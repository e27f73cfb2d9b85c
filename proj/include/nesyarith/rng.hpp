#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nesyarith {

using Rng = std::mt19937_64;

/// FNV-1a, 64-bit.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named, independently seeded stream derived from a root seed, e.g.
/// stream(seed, "data"), stream(seed, "oracle", run_index).
inline Rng stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0) {
  const std::uint64_t s = splitmix64(root_seed ^ splitmix64(fnv1a64(name) + index));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

}  // namespace nesyarith
