#pragma once

#include <cstdint>
#include <string_view>

namespace provtrace {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named pipeline stage: splitmix64(seed ^ fnv1a64(name)).
/// Every random stream in a run is derived this way from the one top-level
/// seed, so a single integer reproduces the whole run.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                           std::string_view name) noexcept {
  return splitmix64(seed ^ fnv1a64(name));
}

/// Seed for the index-th independent item (node, fold, ...).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                           std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index));
}

}  // namespace provtrace
