#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace clta {

using Rng = std::mt19937_64;

// Derives an independent generator from a tuple of integers, e.g.
// (run seed, task index, epoch). Equal tuples give equal streams.
inline Rng derive_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  words.reserve(parts.size() * 2);
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream tags keep generators for different purposes apart.
enum class RngTag : std::uint64_t {
  Init = 0x11,
  Head = 0x12,
  Shuffle = 0x21,
  Data = 0x31,
  Split = 0x32,
  Corruption = 0x33,
  ClassOrder = 0x34,
  Auxiliary = 0x41,
};

inline std::uint64_t tag(RngTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace clta
