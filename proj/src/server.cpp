#include "sp2/server.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sp2/rng.hpp"

namespace sp2 {

// ---------------------------------------------------------------------------
// Public MF training (SGD)
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void diverged(const char* who, int epoch, double delta) {
  throw std::runtime_error(std::string(who) +
                           ": diverged (non-finite residual) at epoch " +
                           std::to_string(epoch) + " with delta=" +
                           std::to_string(delta));
}

}  // namespace

PublicModel train_public(const RatingsDataset& data, const Hyperparams& hp) {
  hp.validate();
  if (data.empty())
    throw std::invalid_argument("train_public: empty dataset");

  const int32_t nu = data.n_users(), ni = data.n_items();
  PublicModel m;
  m.mu = data.mean_rating();
  m.user_bias.assign(nu, 0.0);
  m.item_bias.assign(ni, 0.0);
  m.user_vec = Mat(nu, hp.k);
  m.item_vec = Mat(ni, hp.k);
  m.user_seen.assign(nu, 0);
  m.item_seen.assign(ni, 0);

  auto init_eng = rng::engine(rng::derive(hp.seed, "mf.init"));
  std::normal_distribution<double> gauss(0.0, hp.init_std);
  for (auto& v : m.user_vec.storage()) v = gauss(init_eng);
  for (auto& v : m.item_vec.storage()) v = gauss(init_eng);

  for (const Rating& r : data.ratings()) {
    m.user_seen[r.user] = 1;
    m.item_seen[r.item] = 1;
  }

  const uint64_t order_seed = rng::derive(hp.seed, "mf.order");
  const auto& ratings = data.ratings();
  const double delta = hp.delta, lambda = hp.lambda;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    for (int32_t idx : rng::epoch_order(order_seed, epoch, ratings.size())) {
      const Rating& r = ratings[idx];
      auto p = m.user_vec.row(r.user);
      auto q = m.item_vec.row(r.item);
      const double e = r.value - predict(m.mu, m.user_bias[r.user],
                                         m.item_bias[r.item], p, q);
      if (!std::isfinite(e)) diverged("train_public", epoch, delta);
      m.user_bias[r.user] += delta * (e - lambda * m.user_bias[r.user]);
      m.item_bias[r.item] += delta * (e - lambda * m.item_bias[r.item]);
      // Sequential update order: p_u reads the pre-update q_i, q_i then reads
      // the updated p_u.
      for (int f = 0; f < hp.k; ++f) p[f] += delta * (e * q[f] - lambda * p[f]);
      for (int f = 0; f < hp.k; ++f) q[f] += delta * (e * p[f] - lambda * q[f]);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// k-means over augmented item points [q_i; b_i]
// ---------------------------------------------------------------------------

void ClusterModel::validate() const {
  if (static_cast<int32_t>(centroid_bias.size()) != K ||
      centroid_vec.rows() != K || static_cast<int32_t>(counts.size()) != K)
    throw std::runtime_error("cluster model: centroid arrays do not match K");
  int64_t total = 0;
  for (int32_t c : counts) total += c;
  if (total != n_items())
    throw std::runtime_error("cluster model: member counts do not sum to n_items");
  for (int32_t c : membership)
    if (c < 0 || c >= K)
      throw std::runtime_error("cluster model: membership id out of range");
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

ClusterModel kmeans_items(const PublicModel& model, int32_t K, uint64_t seed) {
  const int32_t n = model.n_items();
  const int32_t dim = model.k() + 1;
  if (K < 1 || K > n)
    throw std::invalid_argument("kmeans_items: K must be in [1, n_items], got " +
                                std::to_string(K));

  // Augmented points: latent vector plus the bias as one extra coordinate.
  Mat points(n, dim);
  for (int32_t i = 0; i < n; ++i) {
    auto dst = points.row(i);
    auto src = model.item_vec.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[dim - 1] = model.item_bias[i];
  }

  auto eng = rng::engine(rng::derive(seed, "kmeans"));

  // k-means++ seeding: first center uniform, the rest D²-weighted.
  Mat centers(K, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    std::uniform_int_distribution<int32_t> uni(0, n - 1);
    const int32_t first = uni(eng);
    auto c0 = centers.row(0);
    std::copy(points.row(first).begin(), points.row(first).end(), c0.begin());
    for (int32_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), c0);
    for (int32_t c = 1; c < K; ++c) {
      double total = 0.0;
      for (double d : d2) total += d;
      int32_t chosen;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(eng), acc = 0.0;
        chosen = n - 1;
        for (int32_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
      } else {
        // All remaining points coincide with an existing center.
        chosen = uni(eng);
      }
      auto cc = centers.row(c);
      std::copy(points.row(chosen).begin(), points.row(chosen).end(), cc.begin());
      for (int32_t i = 0; i < n; ++i)
        d2[i] = std::min(d2[i], sq_dist(points.row(i), cc));
    }
  }

  std::vector<int32_t> assign(n, 0);
  std::vector<int32_t> counts(K, 0);
  double prev_distortion = std::numeric_limits<double>::infinity();
  double distortion = 0.0;
  constexpr int kMaxIters = 100;

  for (int iter = 0; iter < kMaxIters; ++iter) {
    // Assignment step; ties go to the lowest cluster id (strict <).
    bool changed = false;
    distortion = 0.0;
    std::fill(counts.begin(), counts.end(), 0);
    for (int32_t i = 0; i < n; ++i) {
      int32_t best = 0;
      double best_d = sq_dist(points.row(i), centers.row(0));
      for (int32_t c = 1; c < K; ++c) {
        const double d = sq_dist(points.row(i), centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
      counts[best]++;
      distortion += best_d;
    }
    if (distortion > prev_distortion + 1e-9 * (1.0 + prev_distortion))
      throw std::runtime_error("kmeans_items: distortion increased across Lloyd iterations");
    prev_distortion = distortion;

    // Update step.
    Mat sums(K, dim);
    for (int32_t i = 0; i < n; ++i) {
      auto s = sums.row(assign[i]);
      auto p = points.row(i);
      for (int32_t d = 0; d < dim; ++d) s[d] += p[d];
    }
    for (int32_t c = 0; c < K; ++c) {
      if (counts[c] > 0) {
        auto cc = centers.row(c);
        auto s = sums.row(c);
        for (int32_t d = 0; d < dim; ++d) cc[d] = s[d] / counts[c];
      } else {
        // Re-seed an empty cluster from the farthest point, if any point is
        // actually distant from its center.
        int32_t far_i = -1;
        double far_d = 0.0;
        for (int32_t i = 0; i < n; ++i) {
          const double d = sq_dist(points.row(i), centers.row(assign[i]));
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        if (far_i >= 0) {
          auto cc = centers.row(c);
          std::copy(points.row(far_i).begin(), points.row(far_i).end(), cc.begin());
          // Distortion may transiently rise for the donor cluster's mean;
          // reset the monotonicity baseline conservatively.
          prev_distortion = std::numeric_limits<double>::infinity();
        }
      }
    }
    if (!changed && iter > 0) break;
  }

  ClusterModel cm;
  cm.K = K;
  cm.centroid_vec = Mat(K, model.k());
  cm.centroid_bias.assign(K, 0.0);
  cm.membership = std::move(assign);
  cm.counts = std::move(counts);
  cm.distortion = distortion;
  // Final centroids recomputed as exact member means so that the
  // bias-equals-member-mean invariant holds even after a max-iter stop.
  {
    Mat sums(K, dim);
    std::vector<int32_t> cnt(K, 0);
    for (int32_t i = 0; i < n; ++i) {
      auto s = sums.row(cm.membership[i]);
      auto p = points.row(i);
      for (int32_t d = 0; d < dim; ++d) s[d] += p[d];
      cnt[cm.membership[i]]++;
    }
    for (int32_t c = 0; c < K; ++c) {
      if (cnt[c] == 0) continue;
      auto s = sums.row(c);
      auto v = cm.centroid_vec.row(c);
      for (int32_t d = 0; d + 1 < dim; ++d) v[d] = s[d] / cnt[c];
      cm.centroid_bias[c] = s[dim - 1] / cnt[c];
    }
    cm.counts = std::move(cnt);
  }
  cm.validate();
  return cm;
}

// ---------------------------------------------------------------------------
// Joint optimization (PGD on the nonnegative cluster weights)
// ---------------------------------------------------------------------------

std::vector<double> JointModel::item_factor(int32_t item) const {
  std::vector<double> q(k(), 0.0);
  auto w = item_weight.row(item);
  for (int32_t ncl = 0; ncl < z(); ++ncl) {
    if (w[ncl] == 0.0) continue;
    auto c = cluster_vec.row(ncl);
    for (int32_t f = 0; f < k(); ++f) q[f] += w[ncl] * c[f];
  }
  return q;
}

double JointModel::score(int32_t u, int32_t i) const {
  double s = mu;
  const bool us = user_seen[u], is = item_seen[i];
  if (us) s += user_bias[u];
  if (is) s += item_bias[i];
  if (us && is) {
    auto q = item_factor(i);
    s += dot(std::span<const double>(q), user_vec.row(u));
  }
  return s;
}

void JointModel::validate() const {
  for (double w : item_weight.storage())
    if (w < 0.0)
      throw std::runtime_error("joint model: negative cluster weight");
  for (double v : cluster_vec.storage())
    if (!std::isfinite(v))
      throw std::runtime_error("joint model: non-finite cluster center");
  if (user_vec.cols() != cluster_vec.cols())
    throw std::runtime_error("joint model: factor dimensions differ");
  if (item_weight.cols() != cluster_vec.rows())
    throw std::runtime_error("joint model: weight width does not match z");
}

JointModel train_joint(const RatingsDataset& data, const Hyperparams& hp,
                       int32_t z) {
  hp.validate();
  if (data.empty())
    throw std::invalid_argument("train_joint: empty dataset");
  if (z < 1)
    throw std::invalid_argument("train_joint: z must be >= 1");

  const int32_t nu = data.n_users(), ni = data.n_items(), k = hp.k;
  JointModel m;
  m.mu = data.mean_rating();
  m.user_bias.assign(nu, 0.0);
  m.item_bias.assign(ni, 0.0);
  m.user_vec = Mat(nu, k);
  m.cluster_vec = Mat(z, k);
  m.item_weight = Mat(ni, z);
  m.user_seen.assign(nu, 0);
  m.item_seen.assign(ni, 0);

  // Every parameter group starts from N(0, init_std²); the nonnegativity
  // projection is applied to the weights at step 0 as well as after every
  // update, so the w >= 0 invariant holds from construction onward.
  auto init_eng = rng::engine(rng::derive(hp.seed, "joint.init"));
  std::normal_distribution<double> gauss(0.0, hp.init_std);
  for (auto& v : m.user_bias) v = gauss(init_eng);
  for (auto& v : m.item_bias) v = gauss(init_eng);
  for (auto& v : m.user_vec.storage()) v = gauss(init_eng);
  for (auto& v : m.cluster_vec.storage()) v = gauss(init_eng);
  for (auto& v : m.item_weight.storage()) v = std::max(gauss(init_eng), 0.0);

  for (const Rating& r : data.ratings()) {
    m.user_seen[r.user] = 1;
    m.item_seen[r.item] = 1;
  }

  const uint64_t order_seed = rng::derive(hp.seed, "joint.order");
  const auto& ratings = data.ratings();
  const double delta = hp.delta, lambda = hp.lambda;
  std::vector<double> q(k);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    for (int32_t idx : rng::epoch_order(order_seed, epoch, ratings.size())) {
      const Rating& r = ratings[idx];
      auto p = m.user_vec.row(r.user);
      auto w = m.item_weight.row(r.item);

      // q̃_i = Σ_n w_in c_n at the pre-update values.
      std::fill(q.begin(), q.end(), 0.0);
      for (int32_t ncl = 0; ncl < z; ++ncl) {
        if (w[ncl] == 0.0) continue;
        auto c = m.cluster_vec.row(ncl);
        for (int32_t f = 0; f < k; ++f) q[f] += w[ncl] * c[f];
      }
      double pred = m.mu + m.user_bias[r.user] + m.item_bias[r.item];
      for (int32_t f = 0; f < k; ++f) pred += q[f] * p[f];
      const double e = r.value - pred;
      if (!std::isfinite(e)) diverged("train_joint", epoch, delta);

      m.user_bias[r.user] += delta * (e - lambda * m.user_bias[r.user]);
      m.item_bias[r.item] += delta * (e - lambda * m.item_bias[r.item]);
      // Sequential order as in the naive trainer: p_u from the pre-update
      // q̃_i; C from the updated p_u; w from the updated C and p_u, then the
      // projection.
      for (int32_t f = 0; f < k; ++f)
        p[f] += delta * (e * q[f] - lambda * p[f]);
      for (int32_t ncl = 0; ncl < z; ++ncl) {
        auto c = m.cluster_vec.row(ncl);
        const double wn = w[ncl];
        for (int32_t f = 0; f < k; ++f)
          c[f] += delta * (e * wn * p[f] - lambda * c[f]);
      }
      for (int32_t ncl = 0; ncl < z; ++ncl) {
        auto c = m.cluster_vec.row(ncl);
        double cp = 0.0;
        for (int32_t f = 0; f < k; ++f) cp += c[f] * p[f];
        w[ncl] = std::max(w[ncl] + delta * (e * cp - lambda * w[ncl]), 0.0);
      }
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Aux assembly
// ---------------------------------------------------------------------------

AuxVariant aux_variant(const AuxData& aux) {
  return static_cast<AuxVariant>(aux.index());
}

int32_t ClusterMembership::cluster_of(int32_t item) const {
  if (item < 0 || item >= n_items)
    throw std::invalid_argument("membership: unknown item " + std::to_string(item));
  if (!bloom) return assign[item];
  for (int32_t c = 0; c < static_cast<int32_t>(filters.size()); ++c)
    if (filters[c].maybe_contains(static_cast<uint64_t>(item))) return c;
  throw std::runtime_error("membership: item " + std::to_string(item) +
                           " matched no bloom filter");
}

AuxBroadcast build_aux_naive(const PublicModel& model) {
  NaiveAux a;
  a.mu = model.mu;
  a.item_bias = model.item_bias;
  a.item_vec = model.item_vec;
  a.item_seen = model.item_seen;
  return make_broadcast(std::move(a));
}

AuxBroadcast build_aux_cluster(const PublicModel& model,
                               const ClusterModel& clusters, bool bloom,
                               double bloom_fp_rate) {
  if (clusters.n_items() != model.n_items())
    throw std::invalid_argument("build_aux_cluster: cluster model item count mismatch");
  ClusterAux a;
  a.mu = model.mu;
  a.centroid_vec = clusters.centroid_vec;
  a.centroid_bias = clusters.centroid_bias;
  a.counts = clusters.counts;
  a.item_seen = model.item_seen;
  a.membership.n_items = clusters.n_items();
  uint64_t checksum = 14695981039346656037ULL;  // FNV over the assignment
  for (int32_t c : clusters.membership) {
    checksum ^= static_cast<uint32_t>(c);
    checksum *= 1099511628211ULL;
  }
  a.membership.plain_checksum = static_cast<uint32_t>(checksum);
  if (bloom) {
    a.membership.bloom = true;
    a.membership.filters.reserve(clusters.K);
    for (int32_t c = 0; c < clusters.K; ++c)
      a.membership.filters.push_back(
          BloomFilter::with_capacity(clusters.counts[c], bloom_fp_rate));
    for (int32_t i = 0; i < clusters.n_items(); ++i)
      a.membership.filters[clusters.membership[i]].insert(
          static_cast<uint64_t>(i));
  } else {
    a.membership.assign = clusters.membership;
  }
  return make_broadcast(std::move(a));
}

AuxBroadcast build_aux_joint(const JointModel& model, int32_t R) {
  if (R < 1 || R > model.z())
    throw std::invalid_argument("build_aux_joint: R must be in [1, z], got " +
                                std::to_string(R));
  JointAux a;
  a.mu = model.mu;
  a.R = R;
  a.item_bias = model.item_bias;
  a.cluster_vec = model.cluster_vec;
  a.item_seen = model.item_seen;
  const int32_t ni = model.n_items(), z = model.z();
  a.top_idx.resize(static_cast<size_t>(ni) * R);
  a.top_w.resize(static_cast<size_t>(ni) * R);
  std::vector<int32_t> order(z);
  for (int32_t i = 0; i < ni; ++i) {
    auto w = model.item_weight.row(i);
    for (int32_t ncl = 0; ncl < z; ++ncl) order[ncl] = ncl;
    // Weight-descending, ties by lower cluster id.
    std::stable_sort(order.begin(), order.end(),
                     [&](int32_t x, int32_t y) { return w[x] > w[y]; });
    for (int32_t r = 0; r < R; ++r) {
      a.top_idx[static_cast<size_t>(i) * R + r] = order[r];
      a.top_w[static_cast<size_t>(i) * R + r] = w[order[r]];
    }
  }
  return make_broadcast(std::move(a));
}

// ---------------------------------------------------------------------------
// Size accounting
// ---------------------------------------------------------------------------

double bloom_bits_per_item_for_fp(double fp_rate) {
  if (!(fp_rate > 0.0 && fp_rate < 1.0))
    throw std::invalid_argument("bloom bits: fp rate must be in (0,1)");
  const double ln2 = std::log(2.0);
  return -std::log(fp_rate) / (ln2 * ln2);
}

AuxSizeBreakdown aux_size_bytes(AuxVariant variant, int k, int64_t n_items,
                                int K, int z, int R,
                                double bloom_bits_per_item) {
  if (k < 1 || n_items < 1)
    throw std::invalid_argument("aux_size_bytes: k and n_items must be >= 1");
  AuxSizeBreakdown b;
  switch (variant) {
    case AuxVariant::naive:
      b.factor_bytes = 8ull * k * n_items;
      b.bias_bytes = 8ull * n_items;
      break;
    case AuxVariant::cluster:
      if (K < 1) throw std::invalid_argument("aux_size_bytes: cluster needs K >= 1");
      // Centroid latent vector and bias: (k+1) doubles per cluster.
      b.factor_bytes = 8ull * (k + 1) * K;
      b.membership_bytes =
          bloom_bits_per_item <= 0.0
              ? 4ull * n_items
              : static_cast<uint64_t>(
                    std::ceil(bloom_bits_per_item * n_items / 8.0));
      break;
    case AuxVariant::joint:
      if (z < 1 || R < 1 || R > z)
        throw std::invalid_argument("aux_size_bytes: joint needs 1 <= R <= z");
      b.factor_bytes = 8ull * k * z;
      b.bias_bytes = 8ull * n_items;
      b.weight_bytes = static_cast<uint64_t>(R) * (8ull + 4ull) * n_items;
      break;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Top-N' candidate service
// ---------------------------------------------------------------------------

std::vector<RankedItem> top_n_prime(const PublicModel& model, int32_t user,
                                    int32_t n_prime,
                                    const std::vector<int32_t>& exclude,
                                    TopNRequestLog* log) {
  if (user < 0 || user >= model.n_users())
    throw std::invalid_argument("top_n_prime: unknown user " + std::to_string(user));
  if (n_prime < 1)
    throw std::invalid_argument("top_n_prime: n_prime must be >= 1");
  if (log) log->entries.push_back({user, n_prime});

  std::vector<uint8_t> skip(model.n_items(), 0);
  for (int32_t i : exclude)
    if (i >= 0 && i < model.n_items()) skip[i] = 1;

  std::vector<std::pair<double, int32_t>> scored;
  scored.reserve(model.n_items());
  for (int32_t i = 0; i < model.n_items(); ++i)
    if (!skip[i]) scored.emplace_back(model.score(user, i), i);
  const auto take = std::min<size_t>(scored.size(), static_cast<size_t>(n_prime));
  auto cmp = [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  };
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), cmp);

  std::vector<RankedItem> out;
  out.reserve(take);
  for (size_t j = 0; j < take; ++j) {
    RankedItem ri;
    ri.item = scored[j].second;
    ri.score = scored[j].first;
    ri.bias = model.item_bias[ri.item];
    auto v = model.item_vec.row(ri.item);
    ri.vec.assign(v.begin(), v.end());
    ri.seen = model.item_seen[ri.item] != 0;
    out.push_back(std::move(ri));
  }
  return out;
}

}  // namespace sp2
