#include "sp2/device.hpp"

#include <algorithm>
#include <cmath>

#include "sp2/rng.hpp"

namespace sp2 {

void DeviceContext::validate() const {
  if (!aux) throw std::invalid_argument("device: missing aux broadcast");
  if (user < 0) throw std::invalid_argument("device: invalid user id");
  for (const Rating& r : private_ratings)
    if (r.user != user)
      throw std::invalid_argument("device: private rating owned by another user");
  hp.validate();
}

namespace {

int32_t aux_item_count(const AuxData& aux) {
  if (const auto* a = std::get_if<NaiveAux>(&aux)) return a->n_items();
  if (const auto* a = std::get_if<ClusterAux>(&aux)) return a->membership.n_items;
  return std::get<JointAux>(aux).n_items();
}

const std::vector<uint8_t>& aux_item_seen(const AuxData& aux) {
  if (const auto* a = std::get_if<NaiveAux>(&aux)) return a->item_seen;
  if (const auto* a = std::get_if<ClusterAux>(&aux)) return a->item_seen;
  return std::get<JointAux>(aux).item_seen;
}

double aux_mu(const AuxData& aux) {
  if (const auto* a = std::get_if<NaiveAux>(&aux)) return a->mu;
  if (const auto* a = std::get_if<ClusterAux>(&aux)) return a->mu;
  return std::get<JointAux>(aux).mu;
}

PrivateModel init_private(const DeviceContext& ctx, AuxVariant variant) {
  PrivateModel pm;
  pm.user = ctx.user;
  pm.user_bias_star = ctx.b_u;     // fine-tuning starts from the public factor
  pm.user_vec_star = ctx.p_u;
  pm.local_shared.variant = variant;
  pm.fine_tuned = !ctx.private_ratings.empty();
  return pm;
}

// The naive fine-tuning loop, shared by the Naive and Joint variants; `bias`
// and `vec` are the device-local item parameter copies, pre-seeded for every
// privately rated item.
void run_naive_loop(const DeviceContext& ctx, PrivateModel& pm) {
  const int k = static_cast<int>(ctx.p_u.size());
  const double delta = ctx.hp.delta, lambda = ctx.hp.lambda;
  const double mu = aux_mu(ctx.aux->data);
  auto& bias = pm.local_shared.bias;
  auto& vec = pm.local_shared.vec;
  const uint64_t order_seed =
      rng::derive(ctx.hp.seed, "device", static_cast<uint64_t>(ctx.user));
  for (int epoch = 0; epoch < ctx.hp.epochs; ++epoch) {
    for (int32_t idx :
         rng::epoch_order(order_seed, epoch, ctx.private_ratings.size())) {
      const Rating& r = ctx.private_ratings[idx];
      double& b_i = bias.at(r.item);
      auto& q_i = vec.at(r.item);
      double pred = mu + pm.user_bias_star + b_i;
      for (int f = 0; f < k; ++f) pred += q_i[f] * pm.user_vec_star[f];
      const double e = r.value - pred;
      if (!std::isfinite(e))
        throw std::runtime_error("train_private: diverged at epoch " +
                                 std::to_string(epoch));
      pm.user_bias_star += delta * (e - lambda * pm.user_bias_star);
      b_i += delta * (e - lambda * b_i);
      for (int f = 0; f < k; ++f)
        pm.user_vec_star[f] += delta * (e * q_i[f] - lambda * pm.user_vec_star[f]);
      for (int f = 0; f < k; ++f)
        q_i[f] += delta * (e * pm.user_vec_star[f] - lambda * q_i[f]);
    }
  }
}

}  // namespace

PrivateModel train_private_naive(const DeviceContext& ctx) {
  ctx.validate();
  const auto* aux = std::get_if<NaiveAux>(&ctx.aux->data);
  if (!aux)
    throw std::invalid_argument("train_private_naive: aux variant is not Naive");

  PrivateModel pm = init_private(ctx, AuxVariant::naive);
  for (const Rating& r : ctx.private_ratings) {
    if (r.item < 0 || r.item >= aux->n_items())
      throw std::invalid_argument("train_private_naive: unknown item " +
                                  std::to_string(r.item));
    if (!pm.local_shared.bias.count(r.item)) {
      pm.local_shared.bias[r.item] = aux->item_bias[r.item];
      auto q = aux->item_vec.row(r.item);
      pm.local_shared.vec[r.item] = {q.begin(), q.end()};
    }
  }
  run_naive_loop(ctx, pm);
  return pm;
}

PrivateModel train_private_cluster(const DeviceContext& ctx) {
  ctx.validate();
  const auto* aux = std::get_if<ClusterAux>(&ctx.aux->data);
  if (!aux)
    throw std::invalid_argument("train_private_cluster: aux variant is not Cluster");

  PrivateModel pm = init_private(ctx, AuxVariant::cluster);
  const int k = static_cast<int>(ctx.p_u.size());
  const double delta = ctx.hp.delta, lambda = ctx.hp.lambda;

  // Device-local copies of the touched centroids, keyed by cluster id.
  std::vector<int32_t> cluster_for(ctx.private_ratings.size());
  for (size_t j = 0; j < ctx.private_ratings.size(); ++j) {
    const int32_t item = ctx.private_ratings[j].item;
    const int32_t c = aux->membership.cluster_of(item);  // throws when unknown
    cluster_for[j] = c;
    if (!pm.local_shared.bias.count(c)) {
      pm.local_shared.bias[c] = aux->centroid_bias[c];
      auto cv = aux->centroid_vec.row(c);
      pm.local_shared.vec[c] = {cv.begin(), cv.end()};
    }
  }

  const uint64_t order_seed =
      rng::derive(ctx.hp.seed, "device", static_cast<uint64_t>(ctx.user));
  for (int epoch = 0; epoch < ctx.hp.epochs; ++epoch) {
    for (int32_t idx :
         rng::epoch_order(order_seed, epoch, ctx.private_ratings.size())) {
      const Rating& r = ctx.private_ratings[idx];
      const int32_t c = cluster_for[idx];
      const double n_rho = aux->counts[c];
      double& b_c = pm.local_shared.bias.at(c);
      auto& c_vec = pm.local_shared.vec.at(c);
      double pred = aux->mu + pm.user_bias_star + b_c;
      for (int f = 0; f < k; ++f) pred += c_vec[f] * pm.user_vec_star[f];
      const double e = r.value - pred;
      if (!std::isfinite(e))
        throw std::runtime_error("train_private_cluster: diverged at epoch " +
                                 std::to_string(epoch));
      pm.user_bias_star += delta * (e - lambda * pm.user_bias_star);
      // Centroid updates damped by the member count N_ρ(i): the shared
      // center moves 1/N_c as fast as a dedicated item factor would.
      b_c += delta * (e - lambda * b_c) / n_rho;
      for (int f = 0; f < k; ++f)
        pm.user_vec_star[f] += delta * (e * c_vec[f] - lambda * pm.user_vec_star[f]);
      for (int f = 0; f < k; ++f)
        c_vec[f] += delta * (e * pm.user_vec_star[f] - lambda * c_vec[f]) / n_rho;
    }
  }
  return pm;
}

std::pair<double, std::vector<double>> reconstruct_item_factor(
    const JointAux& aux, int32_t item) {
  if (item < 0 || item >= aux.n_items())
    throw std::invalid_argument("reconstruct_item_factor: unknown item " +
                                std::to_string(item));
  const int32_t k = aux.cluster_vec.cols();
  std::vector<double> q(k, 0.0);
  for (int32_t r = 0; r < aux.R; ++r) {
    const size_t slot = static_cast<size_t>(item) * aux.R + r;
    const double w = aux.top_w[slot];
    if (w == 0.0) continue;
    auto c = aux.cluster_vec.row(aux.top_idx[slot]);
    for (int32_t f = 0; f < k; ++f) q[f] += w * c[f];
  }
  return {aux.item_bias[item], std::move(q)};
}

PrivateModel train_private_joint(const DeviceContext& ctx) {
  ctx.validate();
  const auto* aux = std::get_if<JointAux>(&ctx.aux->data);
  if (!aux)
    throw std::invalid_argument("train_private_joint: aux variant is not Joint");

  PrivateModel pm = init_private(ctx, AuxVariant::joint);
  for (const Rating& r : ctx.private_ratings) {
    if (!pm.local_shared.bias.count(r.item)) {
      auto [b_i, q_i] = reconstruct_item_factor(*aux, r.item);
      pm.local_shared.bias[r.item] = b_i;
      pm.local_shared.vec[r.item] = std::move(q_i);
    }
  }
  run_naive_loop(ctx, pm);
  return pm;
}

PrivateModel train_private(const DeviceContext& ctx) {
  if (!ctx.aux) throw std::invalid_argument("device: missing aux broadcast");
  switch (aux_variant(ctx.aux->data)) {
    case AuxVariant::naive:
      return train_private_naive(ctx);
    case AuxVariant::cluster:
      return train_private_cluster(ctx);
    case AuxVariant::joint:
      return train_private_joint(ctx);
  }
  throw std::logic_error("device: unreachable aux variant");
}

double device_score(const DeviceContext& ctx, const PrivateModel& pm,
                    int32_t item) {
  const AuxData& aux = ctx.aux->data;
  const int32_t n_items = aux_item_count(aux);
  if (item < 0 || item >= n_items)
    throw std::invalid_argument("device_score: unknown item " + std::to_string(item));
  const bool user_fit = ctx.user_seen_public || pm.fine_tuned;
  const bool item_seen = aux_item_seen(aux)[item] != 0;
  double s = aux_mu(aux);
  if (user_fit) s += pm.user_bias_star;
  if (!item_seen) return s;

  if (const auto* a = std::get_if<NaiveAux>(&aux)) {
    auto itb = pm.local_shared.bias.find(item);
    s += itb != pm.local_shared.bias.end() ? itb->second : a->item_bias[item];
    if (user_fit) {
      auto itv = pm.local_shared.vec.find(item);
      std::span<const double> q = itv != pm.local_shared.vec.end()
                                      ? std::span<const double>(itv->second)
                                      : a->item_vec.row(item);
      s += dot(q, pm.user_vec_star);
    }
  } else if (const auto* a = std::get_if<ClusterAux>(&aux)) {
    const int32_t c = a->membership.cluster_of(item);
    auto itb = pm.local_shared.bias.find(c);
    s += itb != pm.local_shared.bias.end() ? itb->second : a->centroid_bias[c];
    if (user_fit) {
      auto itv = pm.local_shared.vec.find(c);
      std::span<const double> cv = itv != pm.local_shared.vec.end()
                                       ? std::span<const double>(itv->second)
                                       : a->centroid_vec.row(c);
      s += dot(cv, pm.user_vec_star);
    }
  } else {
    const auto& ja = std::get<JointAux>(aux);
    auto itb = pm.local_shared.bias.find(item);
    if (itb != pm.local_shared.bias.end()) {
      s += itb->second;
      if (user_fit) s += dot(pm.local_shared.vec.at(item), pm.user_vec_star);
    } else {
      auto [b_i, q_i] = reconstruct_item_factor(ja, item);
      s += b_i;
      if (user_fit) s += dot(std::span<const double>(q_i), pm.user_vec_star);
    }
  }
  return s;
}

std::vector<int32_t> local_top_n(const DeviceContext& ctx,
                                 const PrivateModel& pm, int32_t N,
                                 const std::vector<int32_t>& exclude) {
  if (N < 1) throw std::invalid_argument("local_top_n: N must be >= 1");
  const AuxVariant v = aux_variant(ctx.aux->data);
  if (v == AuxVariant::cluster)
    throw std::invalid_argument(
        "local_top_n: cluster aux has no per-item factors; use the top-N' "
        "re-ranking protocol");
  const int32_t n_items = aux_item_count(ctx.aux->data);
  std::vector<uint8_t> skip(n_items, 0);
  for (int32_t i : exclude)
    if (i >= 0 && i < n_items) skip[i] = 1;
  std::vector<std::pair<double, int32_t>> scored;
  scored.reserve(n_items);
  for (int32_t i = 0; i < n_items; ++i)
    if (!skip[i]) scored.emplace_back(device_score(ctx, pm, i), i);
  const auto take = std::min<size_t>(scored.size(), static_cast<size_t>(N));
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first
                                                : a.second < b.second;
                    });
  std::vector<int32_t> out;
  out.reserve(take);
  for (size_t j = 0; j < take; ++j) out.push_back(scored[j].second);
  return out;
}

std::vector<int32_t> rerank_top_n(const std::vector<RankedItem>& candidates,
                                  const DeviceContext& ctx,
                                  const PrivateModel& pm, int32_t N) {
  if (N < 1) throw std::invalid_argument("rerank_top_n: N must be >= 1");
  if (static_cast<size_t>(N) > candidates.size())
    throw std::invalid_argument("rerank_top_n: N exceeds candidate count N'");
  const bool user_fit = ctx.user_seen_public || pm.fine_tuned;
  const double mu = aux_mu(ctx.aux->data);
  std::vector<std::pair<double, int32_t>> scored;
  scored.reserve(candidates.size());
  for (const RankedItem& c : candidates) {
    // Re-score the server-provided public item factor under the private user
    // factor, with the same fallback chain the server applied.
    double s = mu;
    if (user_fit) s += pm.user_bias_star;
    if (c.seen) {
      s += c.bias;
      if (user_fit) s += dot(std::span<const double>(c.vec), pm.user_vec_star);
    }
    scored.emplace_back(s, c.item);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int32_t> out;
  out.reserve(N);
  for (int32_t j = 0; j < N; ++j) out.push_back(scored[j].second);
  return out;
}

}  // namespace sp2
