#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sp2/bloom.hpp"
#include "sp2/core.hpp"

// Everything the central recommender computes. By construction no function
// here accepts a PrivateModel or a private rating set; the only inputs are
// public ratings, the models derived from them, and aux parameters.
namespace sp2 {

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

struct ClusterModel {
  int32_t K = 0;
  Mat centroid_vec;                  // K x k
  std::vector<double> centroid_bias; // K (mean of member item biases)
  std::vector<int32_t> membership;   // item id -> cluster id
  std::vector<int32_t> counts;       // K, members per cluster
  double distortion = 0.0;           // within-cluster SSE over augmented points

  int32_t k() const { return centroid_vec.cols(); }
  int32_t n_items() const { return static_cast<int32_t>(membership.size()); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Joint optimization
// ---------------------------------------------------------------------------

// Items are represented indirectly: q_i = Σ_n w_in · c_n where c_n are the z
// learned cluster centers (rows of cluster_vec) and w_i is nonnegative.
struct JointModel {
  double mu = 0.0;
  std::vector<double> user_bias;
  std::vector<double> item_bias;
  Mat user_vec;     // n_users x k
  Mat cluster_vec;  // z x k, row n = cluster center c_n
  Mat item_weight;  // n_items x z, all entries >= 0
  std::vector<uint8_t> user_seen;
  std::vector<uint8_t> item_seen;

  int32_t k() const { return user_vec.cols(); }
  int32_t z() const { return cluster_vec.rows(); }
  int32_t n_users() const { return user_vec.rows(); }
  int32_t n_items() const { return item_weight.rows(); }

  /// Untruncated item factor Σ_n w_in · c_n.
  std::vector<double> item_factor(int32_t item) const;
  /// Fallback-chain score, mirroring PublicModel::score.
  double score(int32_t u, int32_t i) const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Auxiliary broadcast data
// ---------------------------------------------------------------------------

// Every variant also carries the item-seen bitmask (items with >= 1 public
// training rating) so device-side scoring can apply the same fallback chain
// as the server; the mask holds no rating values and no user state.
struct NaiveAux {
  double mu = 0.0;
  std::vector<double> item_bias;
  Mat item_vec;  // n_items x k
  std::vector<uint8_t> item_seen;

  int32_t n_items() const { return item_vec.rows(); }
  friend bool operator==(const NaiveAux&, const NaiveAux&) = default;
};

// Item -> cluster membership, either a plain assignment vector or one bloom
// filter per cluster. The checksum of the plain assignment always travels
// along so devices can quantify bloom ambiguity against ground truth.
struct ClusterMembership {
  bool bloom = false;
  std::vector<int32_t> assign;       // plain form (empty when bloom)
  std::vector<BloomFilter> filters;  // bloom form (empty when plain)
  uint32_t plain_checksum = 0;
  int32_t n_items = 0;

  /// Plain lookup, or the lowest-id cluster whose filter claims the item.
  int32_t cluster_of(int32_t item) const;

  friend bool operator==(const ClusterMembership&, const ClusterMembership&) = default;
};

struct ClusterAux {
  double mu = 0.0;
  Mat centroid_vec;                   // K x k
  std::vector<double> centroid_bias;  // K
  std::vector<int32_t> counts;        // K (N_c, needed for the damped updates)
  ClusterMembership membership;
  std::vector<uint8_t> item_seen;

  int32_t K() const { return centroid_vec.rows(); }
  friend bool operator==(const ClusterAux&, const ClusterAux&) = default;
};

struct JointAux {
  double mu = 0.0;
  int32_t R = 0;
  std::vector<double> item_bias;
  Mat cluster_vec;               // z x k
  std::vector<int32_t> top_idx;  // n_items*R cluster ids, weight-descending per item
  std::vector<double> top_w;     // n_items*R weights
  std::vector<uint8_t> item_seen;

  int32_t n_items() const { return static_cast<int32_t>(item_bias.size()); }
  int32_t z() const { return cluster_vec.rows(); }
  friend bool operator==(const JointAux&, const JointAux&) = default;
};

using AuxData = std::variant<NaiveAux, ClusterAux, JointAux>;

AuxVariant aux_variant(const AuxData& aux);

/// A broadcast is the aux payload plus its integrity digest; every device
/// receives identical bytes.
struct AuxBroadcast {
  AuxData data;
  std::string sha256_hex;
  uint64_t payload_bytes = 0;

  /// Re-encodes and re-hashes; throws std::runtime_error on any mismatch.
  void verify() const;
};

// ---------------------------------------------------------------------------
// Server operations
// ---------------------------------------------------------------------------

/// Biased-MF SGD on the shared ratings. μ = mean rating, biases start at 0,
/// factors at N(0, init_std²); `epochs` seeded-shuffle passes.
PublicModel train_public(const RatingsDataset& public_data,
                         const Hyperparams& hp);

/// k-means++ / Lloyd over the augmented points [q_i; b_i], Euclidean metric.
ClusterModel kmeans_items(const PublicModel& model, int32_t K, uint64_t seed);

/// Joint cluster/factor SGD with the w >= 0 projection after every step.
JointModel train_joint(const RatingsDataset& public_data, const Hyperparams& hp,
                       int32_t z);

AuxBroadcast build_aux_naive(const PublicModel& model);
AuxBroadcast build_aux_cluster(const PublicModel& model,
                               const ClusterModel& clusters, bool bloom,
                               double bloom_fp_rate = 0.01);
AuxBroadcast build_aux_joint(const JointModel& model, int32_t R);

// Formula-level payload accounting (8-byte floats, 4-byte ids). The actual
// encoded size, with headers and masks, is reported separately on the
// broadcast; acceptance arithmetic uses these formulas.
struct AuxSizeBreakdown {
  uint64_t factor_bytes = 0;      // item factors / centroids / C matrix
  uint64_t bias_bytes = 0;        // per-item or per-centroid biases
  uint64_t membership_bytes = 0;  // cluster membership (plain or bloom)
  uint64_t weight_bytes = 0;      // joint top-R (weight, id) pairs
  uint64_t total() const {
    return factor_bytes + bias_bytes + membership_bytes + weight_bytes;
  }
};

/// bloom_bits_per_item <= 0 selects the plain 4-byte-per-item membership.
AuxSizeBreakdown aux_size_bytes(AuxVariant variant, int k, int64_t n_items,
                                int K = 0, int z = 0, int R = 0,
                                double bloom_bits_per_item = 0.0);

/// Per-item bit cost of bloom membership at the given false-positive rate.
double bloom_bits_per_item_for_fp(double fp_rate);

// ---------------------------------------------------------------------------
// Top-N' candidate service
// ---------------------------------------------------------------------------

struct RankedItem {
  int32_t item = 0;
  double score = 0.0;
  double bias = 0.0;
  std::vector<double> vec;  // public q_i, shipped for device re-ranking
  bool seen = false;        // item had public training ratings
};

// The server is semi-adversarial: it may log who asked for how many
// candidates (and nothing else from the exchange).
struct TopNRequestLog {
  struct Entry {
    int32_t user = 0;
    int32_t n_prime = 0;
  };
  std::vector<Entry> entries;
};

/// Items ranked by public score (ties: lower item id), excluding `exclude`;
/// returns the top n_prime with their public factors.
std::vector<RankedItem> top_n_prime(const PublicModel& model, int32_t user,
                                    int32_t n_prime,
                                    const std::vector<int32_t>& exclude,
                                    TopNRequestLog* log = nullptr);

// ---------------------------------------------------------------------------
// Checkpoint / broadcast codecs (little-endian, bit-exact round-trip)
// ---------------------------------------------------------------------------

std::vector<uint8_t> encode_public_model(const PublicModel& model);
PublicModel decode_public_model(std::span<const uint8_t> bytes);
std::vector<uint8_t> encode_aux(const AuxData& aux);
AuxData decode_aux(std::span<const uint8_t> bytes);

/// Wraps encode_aux with its digest and byte count.
AuxBroadcast make_broadcast(AuxData data);

/// JSON sidecar manifest: variant, dimensions, payload size, digest.
std::string aux_manifest_json(const AuxBroadcast& broadcast);

}  // namespace sp2
