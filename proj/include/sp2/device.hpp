#pragma once

#include <utility>
#include <vector>

#include "sp2/core.hpp"
#include "sp2/server.hpp"

// Everything computed on a user's device. A PrivateModel never leaves this
// module: there is no serializer for it and no server entry point takes one.
namespace sp2 {

struct DeviceContext {
  int32_t user = -1;
  double b_u = 0.0;             // downloaded public user bias
  std::vector<double> p_u;      // downloaded public user factor
  bool user_seen_public = false;  // user had >= 1 public training rating
  const AuxBroadcast* aux = nullptr;
  std::vector<Rating> private_ratings;  // Ω^u_private, all .user == user
  Hyperparams hp;

  void validate() const;  // ownership + aux presence; throws on violation
};

/// Fine-tunes (b_u*, p_u*) and device-local (b_i, q_i) copies over the
/// private ratings. Aux must be the Naive variant.
PrivateModel train_private_naive(const DeviceContext& ctx);

/// As naive, but items are represented by their cluster centroid; centroid
/// updates are damped by the member count N_ρ(i). Aux must be Cluster.
PrivateModel train_private_cluster(const DeviceContext& ctx);

/// (b_i, q̃_i) with q̃_i = Σ over the item's stored top-R pairs of w·c_n.
std::pair<double, std::vector<double>> reconstruct_item_factor(
    const JointAux& aux, int32_t item);

/// Materializes q̃_i for the privately rated items, then runs the naive loop.
/// Aux must be Joint.
PrivateModel train_private_joint(const DeviceContext& ctx);

/// Runs whichever trainer matches the aux variant.
PrivateModel train_private(const DeviceContext& ctx);

/// Device-side score of one item under the fine-tuned model, device-local
/// parameter copies first, broadcast values otherwise, with the same
/// fallback chain as server-side scoring (unseen item -> bias dropped;
/// un-fit user -> user terms dropped).
double device_score(const DeviceContext& ctx, const PrivateModel& pm,
                    int32_t item);

/// Top N over all items not in `exclude`, scored on-device. Ties: lower item
/// id. Aux must be Naive or Joint (per-item coverage).
std::vector<int32_t> local_top_n(const DeviceContext& ctx,
                                 const PrivateModel& pm, int32_t N,
                                 const std::vector<int32_t>& exclude);

/// Re-scores the server's N' candidates with (b_u*, p_u*) and keeps the top N.
std::vector<int32_t> rerank_top_n(const std::vector<RankedItem>& candidates,
                                  const DeviceContext& ctx,
                                  const PrivateModel& pm, int32_t N);

}  // namespace sp2
