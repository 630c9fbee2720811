#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sp2 {

// Little-endian append-only buffer for checkpoint and aux payloads.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v) {
    for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<uint8_t>(v >> s));
  }
  void u64(uint64_t v) {
    for (int s = 0; s < 64; s += 8) buf_.push_back(static_cast<uint8_t>(v >> s));
  }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void tag(const char* magic) { raw(magic, std::strlen(magic)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void i32s(std::span<const int32_t> v) {
    u64(v.size());
    for (int32_t x : v) i32(x);
  }
  void u8s(std::span<const uint8_t> v) {
    u64(v.size());
    raw(v.data(), v.size());
  }

  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> buf) : buf_(buf) {}

  uint8_t u8() { return take(1)[0]; }
  uint32_t u32() {
    auto b = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    auto b = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    auto b = take(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }
  std::vector<double> f64s() {
    const uint64_t n = u64();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<int32_t> i32s() {
    const uint64_t n = u64();
    std::vector<int32_t> v(n);
    for (auto& x : v) x = i32();
    return v;
  }
  std::vector<uint8_t> u8s() {
    const uint64_t n = u64();
    auto b = take(n);
    return {b.begin(), b.end()};
  }
  void expect_tag(const char* magic) {
    const size_t n = std::strlen(magic);
    auto b = take(n);
    if (std::memcmp(b.data(), magic, n) != 0)
      throw std::runtime_error(std::string("decode: expected tag '") + magic + "'");
  }
  bool exhausted() const { return pos_ == buf_.size(); }
  void expect_exhausted() const {
    if (!exhausted())
      throw std::runtime_error("decode: " + std::to_string(buf_.size() - pos_) +
                               " trailing bytes");
  }

 private:
  std::span<const uint8_t> take(size_t n) {
    if (pos_ + n > buf_.size())
      throw std::runtime_error("decode: truncated payload");
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const uint8_t> buf_;
  size_t pos_ = 0;
};

/// Incremental SHA-256 (OpenSSL EVP).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const uint8_t> data);
  void update_text(std::string_view s) {
    update({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  }
  /// Finalizes; the object must not be updated afterwards.
  std::array<uint8_t, 32> finish();
  std::string finish_hex();

 private:
  void* ctx_ = nullptr;
};

std::string sha256_hex(std::span<const uint8_t> data);
std::string to_hex(std::span<const uint8_t> data);

std::vector<uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const uint8_t> data);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace sp2
