#pragma once

#include <cmath>
#include <cstdint>

namespace clfa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_key(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0,
                              std::uint64_t e = 0) {
  std::uint64_t h = splitmix64(a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  h = splitmix64(h ^ d);
  return splitmix64(h ^ e);
}

/// Uniform double in [0,1), a pure function of the key.
inline double counter_uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0,
                              std::uint64_t e = 0) {
  return static_cast<double>(hash_key(a, b, c, d, e) >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller over two counter draws.
inline double counter_normal(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0) {
  const double u1 = 1.0 - counter_uniform(a, b, c, d, 0);
  const double u2 = counter_uniform(a, b, c, d, 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace clfa
