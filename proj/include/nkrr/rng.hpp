#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nkrr {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-work-item seed from a master seed and an integer key. Results depend
/// only on (master, key), never on the order in which items are processed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key) {
  return splitmix64(splitmix64(master) ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view key) {
  return derive_seed(master, fnv1a64(key));
}

}  // namespace nkrr
