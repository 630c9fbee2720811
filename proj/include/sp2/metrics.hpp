#pragma once

#include <span>
#include <string>
#include <vector>

#include "sp2/core.hpp"
#include "sp2/device.hpp"
#include "sp2/server.hpp"

namespace sp2 {

double rmse(std::span<const double> predictions, std::span<const double> truths);

/// Mean NDCG@10 over users with >= 1 test rating. Per user: rank that user's
/// test items by predicted score (ties: lower item id), gain = raw rating,
/// discount log2(rank+1); normalized by the ideal ordering of the same items.
/// `scores` aligns with `test` elementwise. Users with zero ideal DCG score 1.
double ndcg_at_10(const std::vector<Rating>& test,
                  std::span<const double> scores, int32_t n_users);

/// Per-user multi-objective diagnostic f_v: the user's private squared error
/// under the fine-tuned model plus (1/n) times the public regularized loss.
double user_loss_fv(const DeviceContext& ctx, const PrivateModel& pm,
                    const PublicModel& public_model,
                    const RatingsDataset& public_data, double lambda, int n);

/// Everything the server can see. Pointers may be null / empty when a run
/// does not produce that piece of state.
struct ServerState {
  const RatingsDataset* public_data = nullptr;
  const PublicModel* public_model = nullptr;
  const JointModel* joint_model = nullptr;
  std::vector<const AuxBroadcast*> broadcasts;
  const TopNRequestLog* request_log = nullptr;
};

/// SHA-256 over a canonical serialization of the server-visible state (the
/// public dataset is digested in sorted order so construction order cannot
/// leak in). Runs that differ only in private data must produce equal
/// digests; that equality is the framework's privacy audit.
std::string privacy_digest(const ServerState& state);

}  // namespace sp2
