#include "sp2/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sp2/serialize.hpp"

namespace sp2 {

double rmse(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.empty())
    throw std::invalid_argument("rmse: empty input");
  if (predictions.size() != truths.size())
    throw std::invalid_argument("rmse: length mismatch");
  double sse = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - truths[i];
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(predictions.size()));
}

double ndcg_at_10(const std::vector<Rating>& test,
                  std::span<const double> scores, int32_t n_users) {
  if (test.size() != scores.size())
    throw std::invalid_argument("ndcg: scores do not align with test ratings");

  struct Entry {
    double gain;
    double score;
    int32_t item;
  };
  std::vector<std::vector<Entry>> per_user(n_users);
  for (size_t j = 0; j < test.size(); ++j)
    per_user[test[j].user].push_back({test[j].value, scores[j], test[j].item});

  double total = 0.0;
  int64_t counted = 0;
  for (auto& entries : per_user) {
    if (entries.empty()) continue;
    // Predicted order: score descending, ties to the lower item id.
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.score != b.score ? a.score > b.score : a.item < b.item;
    });
    double dcg = 0.0;
    for (size_t j = 0; j < entries.size() && j < 10; ++j)
      dcg += entries[j].gain / std::log2(static_cast<double>(j) + 2.0);
    // Ideal order: gain descending (tie order is gain-equal, so irrelevant).
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.gain > b.gain; });
    double idcg = 0.0;
    for (size_t j = 0; j < entries.size() && j < 10; ++j)
      idcg += entries[j].gain / std::log2(static_cast<double>(j) + 2.0);
    total += idcg > 0.0 ? dcg / idcg : 1.0;
    ++counted;
  }
  if (counted == 0)
    throw std::invalid_argument("ndcg: no user has a test rating");
  return total / static_cast<double>(counted);
}

double user_loss_fv(const DeviceContext& ctx, const PrivateModel& pm,
                    const PublicModel& public_model,
                    const RatingsDataset& public_data, double lambda, int n) {
  if (n < 1) throw std::invalid_argument("user_loss_fv: n must be >= 1");
  // Private part: squared error under the literal on-device predictor (the
  // fine-tuning objective, no fallback masks).
  double private_sse = 0.0;
  const double mu = public_model.mu;
  for (const Rating& r : ctx.private_ratings) {
    double b_i;
    std::span<const double> q_i;
    std::vector<double> recon;
    auto itb = pm.local_shared.bias.find(
        pm.local_shared.variant == AuxVariant::cluster
            ? std::get<ClusterAux>(ctx.aux->data).membership.cluster_of(r.item)
            : r.item);
    if (itb != pm.local_shared.bias.end()) {
      b_i = itb->second;
      q_i = pm.local_shared.vec.at(itb->first);
    } else {
      b_i = public_model.item_bias[r.item];
      q_i = public_model.item_vec.row(r.item);
    }
    const double pred = mu + pm.user_bias_star + b_i +
                        dot(q_i, pm.user_vec_star);
    private_sse += (r.value - pred) * (r.value - pred);
  }
  // Public part: the regularized public loss, shared by every user, weighted
  // by 1/n.
  return private_sse + l2_loss(public_model, public_data, lambda) / n;
}

namespace {

void digest_dataset(Sha256& h, const RatingsDataset& data) {
  // Canonical order: sorted triples, so assembly order cannot distinguish two
  // equal public sets.
  std::vector<Rating> sorted = data.ratings();
  std::sort(sorted.begin(), sorted.end(), [](const Rating& a, const Rating& b) {
    return std::tuple(a.user, a.item, a.value) < std::tuple(b.user, b.item, b.value);
  });
  ByteWriter w;
  w.tag("DATA");
  w.i32(data.n_users());
  w.i32(data.n_items());
  w.f64(data.scale().min);
  w.f64(data.scale().max);
  w.u64(sorted.size());
  for (const Rating& r : sorted) {
    w.i32(r.user);
    w.i32(r.item);
    w.f64(r.value);
  }
  h.update(w.data());
}

}  // namespace

std::string privacy_digest(const ServerState& state) {
  Sha256 h;
  h.update_text("SP2DIGEST1");
  if (state.public_data) {
    h.update_text("|public_data|");
    digest_dataset(h, *state.public_data);
  }
  if (state.public_model) {
    h.update_text("|public_model|");
    h.update(encode_public_model(*state.public_model));
  }
  if (state.joint_model) {
    h.update_text("|joint_model|");
    ByteWriter w;
    w.f64(state.joint_model->mu);
    w.f64s(state.joint_model->user_bias);
    w.f64s(state.joint_model->item_bias);
    w.i32(state.joint_model->user_vec.rows());
    w.i32(state.joint_model->user_vec.cols());
    w.f64s(state.joint_model->user_vec.storage());
    w.i32(state.joint_model->cluster_vec.rows());
    w.f64s(state.joint_model->cluster_vec.storage());
    w.i32(state.joint_model->item_weight.rows());
    w.f64s(state.joint_model->item_weight.storage());
    w.u8s(state.joint_model->user_seen);
    w.u8s(state.joint_model->item_seen);
    h.update(w.data());
  }
  for (const AuxBroadcast* b : state.broadcasts) {
    if (!b) continue;
    h.update_text("|aux|");
    h.update(encode_aux(b->data));
  }
  if (state.request_log) {
    h.update_text("|requests|");
    ByteWriter w;
    w.u64(state.request_log->entries.size());
    for (const auto& e : state.request_log->entries) {
      w.i32(e.user);
      w.i32(e.n_prime);
    }
    h.update(w.data());
  }
  return h.finish_hex();
}

}  // namespace sp2
