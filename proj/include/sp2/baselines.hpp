#pragma once

#include <string>
#include <vector>

#include "sp2/core.hpp"
#include "sp2/privacy.hpp"
#include "sp2/server.hpp"

namespace sp2 {

/// Everything shared: MF on the full training fold.
PublicModel abs_optimistic(const RatingsDataset& train_full,
                           const Hyperparams& hp);

/// Per-user training-mean predictor (global mean for unseen users).
struct UserMeanModel {
  double global_mean = 0.0;
  std::vector<double> user_mean;
  std::vector<uint8_t> user_seen;

  double score(int32_t user) const {
    return user_seen[user] ? user_mean[user] : global_mean;
  }
};

UserMeanModel abs_pessimistic(const RatingsDataset& train_full);

/// Classic CF: train on the public ratings, ignore the private ones.
PublicModel only_public(const PrivacyPartition& partition,
                        const Hyperparams& hp);

struct DPConfig {
  int beta_m = 15;           // fictitious ratings per item
  double noise_sigma = 0.5;  // std of the noise on per-item averages
  uint64_t seed = 0;

  void validate() const;
};

/// Appends, per item, beta_m fictitious ratings at that item's noisy average
/// (clamped to scale) from beta_m synthetic users, then trains MF on
/// real + fictitious.
PublicModel dp_baseline(const RatingsDataset& train_full, const DPConfig& cfg,
                        const Hyperparams& hp);

/// The obfuscated dataset itself, exposed for inspection.
RatingsDataset dp_augment(const RatingsDataset& train_full, const DPConfig& cfg);

enum class ObfuscationPolicy { FR, SR, SM };

std::string to_string(ObfuscationPolicy p);

struct ObfuscationConfig {
  ObfuscationPolicy policy = ObfuscationPolicy::FR;
  int n_peers = 10;
  int ratings_per_peer = 10;  // FR
  double max_fraction = 0.5;  // SR / SM
  uint64_t seed = 0;

  void validate(int32_t n_users) const;
};

/// Pearson correlation over co-rated items; fewer than 2 co-rated items or a
/// degenerate variance yields 0.
double pearson_similarity(const RatingsDataset& data, int32_t user_a,
                          int32_t user_b);

/// Per user: copy ratings from n_peers uniformly chosen peers into the user's
/// profile (FR: fixed count per peer; SR: similarity-scaled fraction;
/// SM: same count, least-rated items first), dropping items the user already
/// rated. Returns the augmented dataset for train_public.
RatingsDataset obfuscate(const RatingsDataset& train_full,
                         const ObfuscationConfig& cfg);

}  // namespace sp2
