#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace masktune {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to expand one root seed into independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named purpose ("init", "mask", "shuffle", "dropout", ...) under
/// a root seed. The scheme is mix64(root ^ fnv1a(purpose)).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  return mix64(root ^ fnv1a(purpose));
}

/// Seed for the i-th sub-stream of a purpose seed (e.g. one per batch).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(base ^ mix64(a)) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

}  // namespace masktune
