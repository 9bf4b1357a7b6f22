#pragma once

#include <cstdint>
#include <random>

namespace pmsm {

// splitmix64 finalizer (Vigna). Used to derive independent engine seeds from
// a (master seed, stream index) pair so that replication r always sees the
// same stream regardless of thread count or execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Keyed stream: one mt19937_64 per (master seed, index).
inline std::mt19937_64 make_stream(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = splitmix64(master ^ splitmix64(index));
  return std::mt19937_64(s);
}

}  // namespace pmsm
