#include "sp2/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "sp2/rng.hpp"

namespace sp2 {

PublicModel abs_optimistic(const RatingsDataset& train_full,
                           const Hyperparams& hp) {
  return train_public(train_full, hp);
}

UserMeanModel abs_pessimistic(const RatingsDataset& train_full) {
  UserMeanModel m;
  const int32_t nu = train_full.n_users();
  m.user_mean.assign(nu, 0.0);
  m.user_seen.assign(nu, 0);
  std::vector<int64_t> counts(nu, 0);
  double total = 0.0;
  for (const Rating& r : train_full.ratings()) {
    m.user_mean[r.user] += r.value;
    counts[r.user]++;
    total += r.value;
  }
  m.global_mean = train_full.empty() ? 0.0 : total / train_full.size();
  for (int32_t u = 0; u < nu; ++u) {
    if (counts[u] > 0) {
      m.user_mean[u] /= counts[u];
      m.user_seen[u] = 1;
    } else {
      m.user_mean[u] = m.global_mean;
    }
  }
  return m;
}

PublicModel only_public(const PrivacyPartition& partition,
                        const Hyperparams& hp) {
  return train_public(partition.public_set, hp);
}

void DPConfig::validate() const {
  if (beta_m < 0) throw std::invalid_argument("dp config: beta_m must be >= 0");
  if (noise_sigma < 0)
    throw std::invalid_argument("dp config: noise_sigma must be >= 0");
}

RatingsDataset dp_augment(const RatingsDataset& train_full,
                          const DPConfig& cfg) {
  cfg.validate();
  if (cfg.beta_m == 0) return train_full;

  const int32_t nu = train_full.n_users(), ni = train_full.n_items();
  std::vector<double> item_sum(ni, 0.0);
  std::vector<int64_t> item_count(ni, 0);
  for (const Rating& r : train_full.ratings()) {
    item_sum[r.item] += r.value;
    item_count[r.item]++;
  }
  const double global_mean =
      train_full.empty() ? train_full.scale().midpoint() : train_full.mean_rating();

  // beta_m synthetic users, each rating every item once at that item's noisy
  // average; their ids extend the user id space.
  IdMap users = train_full.user_ids();
  for (int j = 0; j < cfg.beta_m; ++j)
    users.intern("__dp_synthetic_" + std::to_string(j));

  std::vector<Rating> ratings = train_full.ratings();
  ratings.reserve(ratings.size() + static_cast<size_t>(cfg.beta_m) * ni);
  for (int32_t i = 0; i < ni; ++i) {
    auto eng = rng::engine(rng::derive(cfg.seed, "dp.item",
                                       static_cast<uint64_t>(i)));
    const double base =
        item_count[i] > 0 ? item_sum[i] / item_count[i] : global_mean;
    std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);
    const double noisy = train_full.scale().clamp(
        cfg.noise_sigma > 0.0 ? base + gauss(eng) : base);
    for (int j = 0; j < cfg.beta_m; ++j)
      ratings.push_back({nu + j, i, noisy});
  }
  RatingsDataset out(std::move(ratings), std::move(users),
                     train_full.item_ids(), train_full.scale());
  out.validate();
  return out;
}

PublicModel dp_baseline(const RatingsDataset& train_full, const DPConfig& cfg,
                        const Hyperparams& hp) {
  return train_public(dp_augment(train_full, cfg), hp);
}

std::string to_string(ObfuscationPolicy p) {
  switch (p) {
    case ObfuscationPolicy::FR: return "FR";
    case ObfuscationPolicy::SR: return "SR";
    case ObfuscationPolicy::SM: return "SM";
  }
  return "?";
}

void ObfuscationConfig::validate(int32_t n_users) const {
  if (n_peers < 1)
    throw std::invalid_argument("obfuscation: n_peers must be >= 1");
  if (n_users >= 0 && n_peers > n_users - 1)
    throw std::invalid_argument("obfuscation: n_peers must be <= n_users - 1");
  if (ratings_per_peer < 0)
    throw std::invalid_argument("obfuscation: ratings_per_peer must be >= 0");
  if (!(max_fraction >= 0.0 && max_fraction <= 1.0))
    throw std::invalid_argument("obfuscation: max_fraction must be in [0,1]");
}

namespace {

double pearson_from_profiles(const std::unordered_map<int32_t, double>& a_map,
                             const std::vector<Rating>& b_profile) {
  std::vector<std::pair<double, double>> co;
  for (const Rating& r : b_profile) {
    auto it = a_map.find(r.item);
    if (it != a_map.end()) co.emplace_back(it->second, r.value);
  }
  if (co.size() < 2) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (auto& [x, y] : co) {
    ma += x;
    mb += y;
  }
  ma /= co.size();
  mb /= co.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (auto& [x, y] : co) {
    sxy += (x - ma) * (y - mb);
    sxx += (x - ma) * (x - ma);
    syy += (y - mb) * (y - mb);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double pearson_similarity(const RatingsDataset& data, int32_t user_a,
                          int32_t user_b) {
  std::unordered_map<int32_t, double> a_map;
  std::vector<Rating> b_profile;
  for (const Rating& r : data.ratings()) {
    if (r.user == user_a) a_map[r.item] = r.value;
    if (r.user == user_b) b_profile.push_back(r);
  }
  return pearson_from_profiles(a_map, b_profile);
}

RatingsDataset obfuscate(const RatingsDataset& train_full,
                         const ObfuscationConfig& cfg) {
  const int32_t nu = train_full.n_users();
  cfg.validate(nu);

  // Per-user profiles and global item popularity, both from the full set.
  std::vector<std::vector<Rating>> profile(nu);
  std::vector<int64_t> item_pop(train_full.n_items(), 0);
  for (const Rating& r : train_full.ratings()) {
    profile[r.user].push_back(r);
    item_pop[r.item]++;
  }

  std::vector<Rating> out = train_full.ratings();
  for (int32_t u = 0; u < nu; ++u) {
    auto eng = rng::engine(rng::derive(cfg.seed, "obf.user",
                                       static_cast<uint64_t>(u)));
    // Peers: uniform sample without replacement, excluding u.
    std::vector<int32_t> pool;
    pool.reserve(nu - 1);
    for (int32_t v = 0; v < nu; ++v)
      if (v != u) pool.push_back(v);
    for (int32_t j = 0; j < cfg.n_peers; ++j) {
      std::uniform_int_distribution<size_t> pick(j, pool.size() - 1);
      std::swap(pool[j], pool[pick(eng)]);
    }

    std::unordered_set<int32_t> owned;
    std::unordered_map<int32_t, double> u_map;
    for (const Rating& r : profile[u]) {
      owned.insert(r.item);
      u_map[r.item] = r.value;
    }

    for (int32_t j = 0; j < cfg.n_peers; ++j) {
      const int32_t peer = pool[j];
      auto peer_ratings = profile[peer];  // copy; selection reorders it
      if (peer_ratings.empty()) continue;

      size_t want = 0;
      switch (cfg.policy) {
        case ObfuscationPolicy::FR:
          want = std::min<size_t>(cfg.ratings_per_peer, peer_ratings.size());
          // Uniform selection via partial shuffle.
          for (size_t t = 0; t < want; ++t) {
            std::uniform_int_distribution<size_t> pick(t, peer_ratings.size() - 1);
            std::swap(peer_ratings[t], peer_ratings[pick(eng)]);
          }
          break;
        case ObfuscationPolicy::SR:
        case ObfuscationPolicy::SM: {
          const double sim =
              std::max(pearson_from_profiles(u_map, profile[peer]), 0.0);
          const double fraction = sim * cfg.max_fraction;
          want = static_cast<size_t>(std::clamp<int64_t>(
              round_half_even(fraction * static_cast<double>(peer_ratings.size())),
              0, static_cast<int64_t>(peer_ratings.size())));
          if (cfg.policy == ObfuscationPolicy::SR) {
            for (size_t t = 0; t < want; ++t) {
              std::uniform_int_distribution<size_t> pick(t, peer_ratings.size() - 1);
              std::swap(peer_ratings[t], peer_ratings[pick(eng)]);
            }
          } else {
            // SM: least-rated items first (ties by lower item id).
            std::sort(peer_ratings.begin(), peer_ratings.end(),
                      [&](const Rating& a, const Rating& b) {
                        return item_pop[a.item] != item_pop[b.item]
                                   ? item_pop[a.item] < item_pop[b.item]
                                   : a.item < b.item;
                      });
          }
          break;
        }
      }
      for (size_t t = 0; t < want; ++t) {
        const Rating& src = peer_ratings[t];
        if (owned.count(src.item)) continue;  // user already rated this item
        owned.insert(src.item);
        out.push_back({u, src.item, src.value});
      }
    }
  }
  RatingsDataset aug = train_full.with_ratings(std::move(out));
  aug.validate();
  return aug;
}

}  // namespace sp2
