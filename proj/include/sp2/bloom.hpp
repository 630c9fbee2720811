#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sp2/rng.hpp"

namespace sp2 {

// Classic bloom filter over uint64 keys, double hashing
// h_j(x) = h1(x) + j*h2(x) mod m. Bit count and hash count are sized from
// the usual optimum m = -n ln(fp)/ln(2)^2, h = m/n * ln(2).
class BloomFilter {
 public:
  BloomFilter() = default;

  static BloomFilter with_capacity(int64_t n, double fp_rate) {
    if (n < 0) throw std::invalid_argument("bloom: negative capacity");
    if (!(fp_rate > 0.0 && fp_rate < 1.0))
      throw std::invalid_argument("bloom: fp rate must be in (0,1)");
    const double ln2 = std::log(2.0);
    const int64_t n_eff = n < 1 ? 1 : n;
    auto m = static_cast<size_t>(
        std::ceil(-static_cast<double>(n_eff) * std::log(fp_rate) / (ln2 * ln2)));
    if (m < 8) m = 8;
    int h = static_cast<int>(std::lround(static_cast<double>(m) / n_eff * ln2));
    if (h < 1) h = 1;
    BloomFilter f;
    f.n_bits_ = m;
    f.n_hashes_ = h;
    f.bits_.assign((m + 7) / 8, 0);
    return f;
  }

  void insert(uint64_t key) {
    const auto [h1, h2] = hash_pair(key);
    for (int j = 0; j < n_hashes_; ++j) {
      const size_t bit = (h1 + static_cast<uint64_t>(j) * h2) % n_bits_;
      bits_[bit >> 3] |= static_cast<uint8_t>(1u << (bit & 7));
    }
  }

  bool maybe_contains(uint64_t key) const {
    if (n_bits_ == 0) return false;
    const auto [h1, h2] = hash_pair(key);
    for (int j = 0; j < n_hashes_; ++j) {
      const size_t bit = (h1 + static_cast<uint64_t>(j) * h2) % n_bits_;
      if (!(bits_[bit >> 3] & (1u << (bit & 7)))) return false;
    }
    return true;
  }

  size_t n_bits() const { return n_bits_; }
  int n_hashes() const { return n_hashes_; }
  size_t byte_size() const { return bits_.size(); }
  const std::vector<uint8_t>& bits() const { return bits_; }

  static BloomFilter from_parts(size_t n_bits, int n_hashes,
                                std::vector<uint8_t> bits) {
    BloomFilter f;
    f.n_bits_ = n_bits;
    f.n_hashes_ = n_hashes;
    f.bits_ = std::move(bits);
    if (f.bits_.size() != (n_bits + 7) / 8)
      throw std::runtime_error("bloom: bit array length inconsistent with bit count");
    return f;
  }

  friend bool operator==(const BloomFilter&, const BloomFilter&) = default;

 private:
  std::pair<uint64_t, uint64_t> hash_pair(uint64_t key) const {
    const uint64_t h1 = rng::splitmix64(key);
    uint64_t h2 = rng::splitmix64(key ^ 0x9e3779b97f4a7c15ULL) | 1ULL;
    return {h1, h2};
  }

  size_t n_bits_ = 0;
  int n_hashes_ = 0;
  std::vector<uint8_t> bits_;
};

}  // namespace sp2
