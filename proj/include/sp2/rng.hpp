#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sp2 {

// Deterministic seed derivation. Every stochastic stage of a run draws from
// its own stream, keyed by (base seed, stage tag, indices), so results do not
// depend on scheduling or on which other stages ran.
namespace rng {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t derive(uint64_t base, std::string_view tag, uint64_t a = 0,
                       uint64_t b = 0) {
  uint64_t h = splitmix64(base ^ fnv1a(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 engine(uint64_t seed) { return std::mt19937_64(seed); }

// Visit order for one SGD epoch: a seeded uniform shuffle of [0, n).
// Exposed so test oracles can replay the exact traversal.
inline std::vector<int32_t> epoch_order(uint64_t train_seed, int epoch,
                                        size_t n) {
  std::vector<int32_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int32_t>(i);
  auto eng = engine(derive(train_seed, "epoch", static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), eng);
  return order;
}

}  // namespace rng
}  // namespace sp2
