#include "sp2/serialize.hpp"

#include <openssl/evp.h>

#include <fstream>

#include "json.hpp"
#include "sp2/server.hpp"

namespace sp2 {

// ---------------------------------------------------------------------------
// SHA-256
// ---------------------------------------------------------------------------

Sha256::Sha256() {
  auto* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: EVP init failed");
  ctx_ = ctx;
}

Sha256::~Sha256() {
  if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(std::span<const uint8_t> data) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(),
                       data.size()) != 1)
    throw std::runtime_error("sha256: EVP update failed");
}

std::array<uint8_t, 32> Sha256::finish() {
  std::array<uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 ||
      len != out.size())
    throw std::runtime_error("sha256: EVP final failed");
  return out;
}

std::string Sha256::finish_hex() {
  auto d = finish();
  return to_hex(d);
}

std::string to_hex(std::span<const uint8_t> data) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

std::string sha256_hex(std::span<const uint8_t> data) {
  Sha256 h;
  h.update(data);
  return h.finish_hex();
}

// ---------------------------------------------------------------------------
// File IO
// ---------------------------------------------------------------------------

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const uint8_t> data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

void write_file_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const uint8_t*>(text.data()),
                          text.size()});
}

// ---------------------------------------------------------------------------
// Model / aux codecs. Formats are versioned by their magic tags; all payloads
// must round-trip bit-exactly (tested).
// ---------------------------------------------------------------------------

namespace {

void put_mat(ByteWriter& w, const Mat& m) {
  w.i32(m.rows());
  w.i32(m.cols());
  w.f64s(m.storage());
}

Mat get_mat(ByteReader& r) {
  const int32_t rows = r.i32();
  const int32_t cols = r.i32();
  auto data = r.f64s();
  if (data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols))
    throw std::runtime_error("decode: matrix payload size mismatch");
  Mat m(rows, cols);
  m.storage() = std::move(data);
  return m;
}

}  // namespace

std::vector<uint8_t> encode_public_model(const PublicModel& model) {
  ByteWriter w;
  w.tag("SP2MDL1");
  w.f64(model.mu);
  w.f64s(model.user_bias);
  w.f64s(model.item_bias);
  put_mat(w, model.user_vec);
  put_mat(w, model.item_vec);
  w.u8s(model.user_seen);
  w.u8s(model.item_seen);
  return w.take();
}

PublicModel decode_public_model(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("SP2MDL1");
  PublicModel m;
  m.mu = r.f64();
  m.user_bias = r.f64s();
  m.item_bias = r.f64s();
  m.user_vec = get_mat(r);
  m.item_vec = get_mat(r);
  m.user_seen = r.u8s();
  m.item_seen = r.u8s();
  r.expect_exhausted();
  m.validate();
  return m;
}

namespace {

void put_bloom(ByteWriter& w, const BloomFilter& f) {
  w.u64(f.n_bits());
  w.i32(f.n_hashes());
  w.u8s(f.bits());
}

BloomFilter get_bloom(ByteReader& r) {
  const uint64_t n_bits = r.u64();
  const int32_t n_hashes = r.i32();
  auto bits = r.u8s();
  return BloomFilter::from_parts(n_bits, n_hashes, std::move(bits));
}

}  // namespace

std::vector<uint8_t> encode_aux(const AuxData& aux) {
  ByteWriter w;
  w.tag("SP2AUX1");
  w.u8(static_cast<uint8_t>(aux_variant(aux)));
  if (const auto* a = std::get_if<NaiveAux>(&aux)) {
    w.f64(a->mu);
    w.f64s(a->item_bias);
    put_mat(w, a->item_vec);
    w.u8s(a->item_seen);
  } else if (const auto* a = std::get_if<ClusterAux>(&aux)) {
    w.f64(a->mu);
    put_mat(w, a->centroid_vec);
    w.f64s(a->centroid_bias);
    w.i32s(a->counts);
    w.u8(a->membership.bloom ? 1 : 0);
    w.i32s(a->membership.assign);
    w.u32(static_cast<uint32_t>(a->membership.filters.size()));
    for (const auto& f : a->membership.filters) put_bloom(w, f);
    w.u32(a->membership.plain_checksum);
    w.i32(a->membership.n_items);
    w.u8s(a->item_seen);
  } else {
    const auto& j = std::get<JointAux>(aux);
    w.f64(j.mu);
    w.i32(j.R);
    w.f64s(j.item_bias);
    put_mat(w, j.cluster_vec);
    w.i32s(j.top_idx);
    w.f64s(j.top_w);
    w.u8s(j.item_seen);
  }
  return w.take();
}

AuxData decode_aux(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("SP2AUX1");
  const auto variant = static_cast<AuxVariant>(r.u8());
  AuxData out;
  switch (variant) {
    case AuxVariant::naive: {
      NaiveAux a;
      a.mu = r.f64();
      a.item_bias = r.f64s();
      a.item_vec = get_mat(r);
      a.item_seen = r.u8s();
      out = std::move(a);
      break;
    }
    case AuxVariant::cluster: {
      ClusterAux a;
      a.mu = r.f64();
      a.centroid_vec = get_mat(r);
      a.centroid_bias = r.f64s();
      a.counts = r.i32s();
      a.membership.bloom = r.u8() != 0;
      a.membership.assign = r.i32s();
      const uint32_t nf = r.u32();
      a.membership.filters.reserve(nf);
      for (uint32_t i = 0; i < nf; ++i) a.membership.filters.push_back(get_bloom(r));
      a.membership.plain_checksum = r.u32();
      a.membership.n_items = r.i32();
      a.item_seen = r.u8s();
      out = std::move(a);
      break;
    }
    case AuxVariant::joint: {
      JointAux a;
      a.mu = r.f64();
      a.R = r.i32();
      a.item_bias = r.f64s();
      a.cluster_vec = get_mat(r);
      a.top_idx = r.i32s();
      a.top_w = r.f64s();
      a.item_seen = r.u8s();
      out = std::move(a);
      break;
    }
    default:
      throw std::runtime_error("decode: unknown aux variant byte");
  }
  r.expect_exhausted();
  return out;
}

AuxBroadcast make_broadcast(AuxData data) {
  AuxBroadcast b;
  b.data = std::move(data);
  auto bytes = encode_aux(b.data);
  b.payload_bytes = bytes.size();
  b.sha256_hex = sha256_hex(bytes);
  return b;
}

void AuxBroadcast::verify() const {
  auto bytes = encode_aux(data);
  if (bytes.size() != payload_bytes)
    throw std::runtime_error("aux broadcast: payload size mismatch");
  if (sp2::sha256_hex(bytes) != sha256_hex)
    throw std::runtime_error("aux broadcast: digest mismatch");
}

std::string aux_manifest_json(const AuxBroadcast& broadcast) {
  nlohmann::json j;
  j["sha256"] = broadcast.sha256_hex;
  j["payload_bytes"] = broadcast.payload_bytes;
  if (const auto* a = std::get_if<NaiveAux>(&broadcast.data)) {
    j["variant"] = "naive";
    j["n_items"] = a->n_items();
    j["k"] = a->item_vec.cols();
  } else if (const auto* a = std::get_if<ClusterAux>(&broadcast.data)) {
    j["variant"] = "cluster";
    j["K"] = a->K();
    j["k"] = a->centroid_vec.cols();
    j["n_items"] = a->membership.n_items;
    j["bloom"] = a->membership.bloom;
    j["membership_checksum"] = a->membership.plain_checksum;
  } else {
    const auto& ja = std::get<JointAux>(broadcast.data);
    j["variant"] = "joint";
    j["z"] = ja.z();
    j["R"] = ja.R;
    j["k"] = ja.cluster_vec.cols();
    j["n_items"] = ja.n_items();
  }
  return j.dump(2) + "\n";
}

}  // namespace sp2
