#pragma once

#include <string>
#include <vector>

#include "sp2/core.hpp"

namespace sp2 {

enum class Hypothesis { H1, H2 };

std::string to_string(Hypothesis h);
Hypothesis hypothesis_from_string(const std::string& s);

struct BetaConfig {
  double alpha = 2.0;
  double beta = 2.0;
  std::string label = "balanced";

  double mean() const { return alpha / (alpha + beta); }
  void validate() const;

  static BetaConfig named(const std::string& label);  // balanced|extreme|pessimistic|optimistic
  static BetaConfig custom(double alpha, double beta);
};

struct PrivacyPartition {
  Hypothesis hypothesis = Hypothesis::H1;
  RatingsDataset public_set;
  // Ω^u_private, indexed by user id; empty vectors for fully public users.
  std::vector<std::vector<Rating>> private_per_user;
  // Realized γ_u per user (H1) or γ_i per item (H2).
  std::vector<double> ratios;

  size_t private_count() const;
  /// Fraction of the source training set marked private.
  double realized_private_fraction(size_t source_size) const;
  /// Checks disjoint-union against the source training set; throws on violation.
  void validate_against(const RatingsDataset& source) const;
};

/// n i.i.d. beta(α,β) draws in [0,1], deterministic under seed.
std::vector<double> sample_beta(const BetaConfig& config, size_t n,
                                uint64_t seed);

/// Per user u: draw γ_u ~ beta, mark round(γ_u·|Ω^u|) uniformly chosen ratings
/// private (round-half-to-even). Per-user sub-seeds derived from (seed, u).
PrivacyPartition allocate_h1(const RatingsDataset& train,
                             const BetaConfig& config, uint64_t seed);

/// As allocate_h1 with user/item roles swapped (γ_i per item).
PrivacyPartition allocate_h2(const RatingsDataset& train,
                             const BetaConfig& config, uint64_t seed);

/// Forced-ratio variants: skip the beta draw and use the given γ for every
/// user (item). Degenerate endpoints of the privacy sweep (γ = 0 or 1) and
/// boundary tests use these.
PrivacyPartition allocate_h1_const(const RatingsDataset& train, double gamma,
                                   uint64_t seed);
PrivacyPartition allocate_h2_const(const RatingsDataset& train, double gamma,
                                   uint64_t seed);

/// public.tsv + private/user_<rawid>.tsv shards + manifest.json under dir.
void export_partition(const std::string& dir, const PrivacyPartition& partition,
                      const RatingsDataset& source, const BetaConfig& config,
                      uint64_t seed);

}  // namespace sp2
