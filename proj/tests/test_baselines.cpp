#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "doctest.h"
#include "sp2/baselines.hpp"
#include "sp2/privacy.hpp"
#include "support/synth.hpp"

using namespace sp2;

namespace {

// Three users with hand-picked overlaps:
//   u0: {0:1, 1:5}
//   u1: {0:1, 1:5, 2:4, 3:4, 4:4, 5:4}   (perfectly correlated with u0)
//   u2: {0:5, 1:1}                        (perfectly anti-correlated with u0)
RatingsDataset overlap_dataset() {
  std::vector<Rating> rs = {
      {0, 0, 1.0}, {0, 1, 5.0}, {1, 0, 1.0}, {1, 1, 5.0}, {1, 2, 4.0},
      {1, 3, 4.0}, {1, 4, 4.0}, {1, 5, 4.0}, {2, 0, 5.0}, {2, 1, 1.0},
  };
  return RatingsDataset::from_triples(rs, 3, 6, {1.0, 5.0});
}

}  // namespace

TEST_CASE("abs_pessimistic: per-user training means") {
  auto data = RatingsDataset::from_triples(
      {{0, 0, 1.0}, {0, 1, 5.0}, {1, 0, 2.0}}, 3, 2, {1.0, 5.0});
  auto m = abs_pessimistic(data);
  CHECK(m.global_mean == doctest::Approx(8.0 / 3.0));
  CHECK(m.score(0) == doctest::Approx(3.0));
  CHECK(m.score(1) == doctest::Approx(2.0));
  // User 2 never rated anything: global-mean fallback.
  CHECK(m.user_seen[2] == 0);
  CHECK(m.score(2) == doctest::Approx(8.0 / 3.0));
}

TEST_CASE("abs_optimistic and only_public are the shared trainer") {
  auto data = testsupport::synth_small();
  auto hp = testsupport::test_hp();
  CHECK(abs_optimistic(data, hp) == train_public(data, hp));

  auto part = allocate_h1(data, BetaConfig::named("balanced"), 321);
  CHECK(only_public(part, hp) == train_public(part.public_set, hp));
}

TEST_CASE("dp_augment: fictitious profile shape and values") {
  auto data = overlap_dataset();
  DPConfig cfg;
  cfg.beta_m = 3;
  cfg.noise_sigma = 0.0;  // noiseless: fictitious value = exact item average
  cfg.seed = 5;

  auto aug = dp_augment(data, cfg);
  CHECK(aug.size() == data.size() + 3 * 6);
  CHECK(aug.n_users() == 6);
  CHECK(aug.n_items() == 6);
  CHECK(aug.user_ids().raw(3) == "__dp_synthetic_0");
  CHECK(aug.user_ids().raw(5) == "__dp_synthetic_2");
  // Original ratings survive untouched, in order.
  for (size_t j = 0; j < data.size(); ++j)
    CHECK(aug.ratings()[j] == data.ratings()[j]);
  // Item 0 average = (1+1+5)/3; every synthetic rating of item 0 carries it.
  for (const Rating& r : aug.ratings())
    if (r.user >= 3 && r.item == 0)
      CHECK(r.value == doctest::Approx(7.0 / 3.0).epsilon(1e-15));
  // Each synthetic user rates every item exactly once.
  for (int32_t u = 3; u < 6; ++u) {
    std::set<int32_t> items;
    for (const Rating& r : aug.ratings())
      if (r.user == u) items.insert(r.item);
    CHECK(items.size() == 6);
  }
}

TEST_CASE("dp_augment: beta_m = 0 is the identity") {
  auto data = overlap_dataset();
  DPConfig cfg;
  cfg.beta_m = 0;
  cfg.noise_sigma = 0.5;
  CHECK(dp_augment(data, cfg) == data);
}

TEST_CASE("dp_augment: noisy values stay on-scale and depend on the seed") {
  auto data = testsupport::synth_small();
  DPConfig a;
  a.beta_m = 2;
  a.noise_sigma = 2.0;  // large noise so clamping actually engages
  a.seed = 1;
  auto aug = dp_augment(data, a);
  for (size_t j = data.size(); j < aug.size(); ++j) {
    CHECK(aug.ratings()[j].value >= 1.0);
    CHECK(aug.ratings()[j].value <= 5.0);
  }
  CHECK(dp_augment(data, a) == aug);  // deterministic
  DPConfig b = a;
  b.seed = 2;
  CHECK(!(dp_augment(data, b) == aug));

  DPConfig bad;
  bad.beta_m = -1;
  CHECK_THROWS_AS(dp_augment(data, bad), std::invalid_argument);
}

TEST_CASE("dp_baseline trains on the augmented set") {
  auto data = overlap_dataset();
  DPConfig cfg;
  cfg.beta_m = 2;
  cfg.noise_sigma = 0.25;
  cfg.seed = 9;
  auto hp = testsupport::test_hp();
  CHECK(dp_baseline(data, cfg, hp) == train_public(dp_augment(data, cfg), hp));
}

TEST_CASE("pearson_similarity: hand values") {
  auto data = overlap_dataset();
  CHECK(pearson_similarity(data, 0, 1) == doctest::Approx(1.0));
  CHECK(pearson_similarity(data, 0, 2) == doctest::Approx(-1.0));
  CHECK(pearson_similarity(data, 1, 2) == doctest::Approx(-1.0));
  // Fewer than two co-rated items.
  auto sparse = RatingsDataset::from_triples(
      {{0, 0, 5.0}, {1, 0, 3.0}, {1, 1, 4.0}}, 2, 2, {1.0, 5.0});
  CHECK(pearson_similarity(sparse, 0, 1) == 0.0);
  // Degenerate variance: one side rates everything identically.
  auto flat = RatingsDataset::from_triples(
      {{0, 0, 4.0}, {0, 1, 4.0}, {1, 0, 2.0}, {1, 1, 5.0}}, 2, 2, {1.0, 5.0});
  CHECK(pearson_similarity(flat, 0, 1) == 0.0);
}

TEST_CASE("obfuscate SM: hand oracle, least-popular items first") {
  auto data = overlap_dataset();
  ObfuscationConfig cfg;
  cfg.policy = ObfuscationPolicy::SM;
  cfg.n_peers = 2;  // = n_users - 1: both other users are always peers
  cfg.max_fraction = 0.5;
  cfg.seed = 13;

  auto aug = obfuscate(data, cfg);
  // u0 <- u1: sim 1.0, want = round(0.5*6) = 3. u1's profile sorted by
  // (popularity asc, id asc) starts 2,3,4,5 so u0 gains items {2,3,4}.
  // All pairs involving u2 have sim <= 0 and a u1 <- u0 transfer picks item 0,
  // which u1 already owns. Net: exactly three new ratings.
  REQUIRE(aug.size() == data.size() + 3);
  for (size_t j = 0; j < data.size(); ++j)
    CHECK(aug.ratings()[j] == data.ratings()[j]);
  std::set<std::pair<int32_t, int32_t>> added;
  for (size_t j = data.size(); j < aug.size(); ++j) {
    const Rating& r = aug.ratings()[j];
    added.insert({r.user, r.item});
    CHECK(r.value == 4.0);  // u1 rates items 2..5 with 4.0
  }
  CHECK(added == std::set<std::pair<int32_t, int32_t>>{{0, 2}, {0, 3}, {0, 4}});
}

TEST_CASE("obfuscate FR: count bounds, ownership, determinism") {
  auto data = testsupport::synth_small();
  ObfuscationConfig cfg;
  cfg.policy = ObfuscationPolicy::FR;
  cfg.n_peers = 4;
  cfg.ratings_per_peer = 6;
  cfg.seed = 21;

  auto aug = obfuscate(data, cfg);
  aug.validate();
  CHECK(aug.size() > data.size());
  for (size_t j = 0; j < data.size(); ++j)
    CHECK(aug.ratings()[j] == data.ratings()[j]);

  // Per-user growth is bounded by n_peers * ratings_per_peer, and no user
  // ends up with a duplicated item.
  std::vector<int32_t> before(data.n_users(), 0), after(data.n_users(), 0);
  for (const Rating& r : data.ratings()) before[r.user]++;
  std::set<std::pair<int32_t, int32_t>> pairs;
  for (const Rating& r : aug.ratings()) {
    after[r.user]++;
    CHECK(pairs.insert({r.user, r.item}).second);
  }
  for (int32_t u = 0; u < data.n_users(); ++u) {
    CHECK(after[u] >= before[u]);
    CHECK(after[u] - before[u] <= cfg.n_peers * cfg.ratings_per_peer);
  }

  CHECK(obfuscate(data, cfg) == aug);
  ObfuscationConfig other = cfg;
  other.seed = 22;
  CHECK(!(obfuscate(data, other) == aug));

  // Copying zero ratings per peer changes nothing.
  ObfuscationConfig zero = cfg;
  zero.ratings_per_peer = 0;
  CHECK(obfuscate(data, zero) == data);
}

TEST_CASE("obfuscate SR: zero fraction is the identity, fractions bound growth") {
  auto data = testsupport::synth_small();
  ObfuscationConfig cfg;
  cfg.policy = ObfuscationPolicy::SR;
  cfg.n_peers = 5;
  cfg.max_fraction = 0.0;
  cfg.seed = 3;
  CHECK(obfuscate(data, cfg) == data);

  cfg.max_fraction = 0.4;
  auto aug = obfuscate(data, cfg);
  aug.validate();
  std::vector<int32_t> per_peer_cap(data.n_users(), 0);
  for (const Rating& r : data.ratings()) per_peer_cap[r.user]++;
  const int32_t biggest =
      *std::max_element(per_peer_cap.begin(), per_peer_cap.end());
  std::vector<int32_t> before(data.n_users(), 0), after(data.n_users(), 0);
  for (const Rating& r : data.ratings()) before[r.user]++;
  for (const Rating& r : aug.ratings()) after[r.user]++;
  for (int32_t u = 0; u < data.n_users(); ++u)
    CHECK(after[u] - before[u] <=
          cfg.n_peers * static_cast<int32_t>(std::ceil(cfg.max_fraction * biggest)));
}

TEST_CASE("obfuscation config validation") {
  auto data = overlap_dataset();
  ObfuscationConfig cfg;
  cfg.n_peers = 0;
  CHECK_THROWS_AS(obfuscate(data, cfg), std::invalid_argument);
  cfg.n_peers = 3;  // only 2 other users exist
  CHECK_THROWS_WITH_AS(obfuscate(data, cfg),
                       doctest::Contains("n_users - 1"), std::invalid_argument);
  cfg.n_peers = 2;
  cfg.ratings_per_peer = -1;
  CHECK_THROWS_AS(obfuscate(data, cfg), std::invalid_argument);
  cfg.ratings_per_peer = 5;
  cfg.max_fraction = 1.5;
  CHECK_THROWS_AS(obfuscate(data, cfg), std::invalid_argument);
}
