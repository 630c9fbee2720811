#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <utility>

#include "doctest.h"
#include "sp2/device.hpp"
#include "sp2/rng.hpp"
#include "sp2/server.hpp"
#include "support/synth.hpp"

using namespace sp2;

namespace {

// A 2-item naive broadcast with everything at zero: score dynamics reduce to
// hand-checkable bias arithmetic.
AuxBroadcast flat_naive_aux(int32_t n_items = 2, int k = 1, double mu = 3.0) {
  NaiveAux aux;
  aux.mu = mu;
  aux.item_bias.assign(n_items, 0.0);
  aux.item_vec = Mat(n_items, k);
  aux.item_seen.assign(n_items, 1);
  return make_broadcast(aux);
}

Hyperparams bias_hp() {
  Hyperparams hp;
  hp.k = 1;
  hp.delta = 0.1;
  hp.lambda = 0.0;
  hp.epochs = 1;
  hp.seed = 99;
  return hp;
}

DeviceContext flat_ctx(const AuxBroadcast& aux) {
  DeviceContext ctx;
  ctx.user = 0;
  ctx.b_u = 0.0;
  ctx.p_u = {0.0};
  ctx.user_seen_public = true;
  ctx.aux = &aux;
  ctx.hp = bias_hp();
  return ctx;
}

}  // namespace

TEST_CASE("naive fine-tune: one-rating bias oracle") {
  auto aux = flat_naive_aux();
  auto ctx = flat_ctx(aux);
  ctx.private_ratings = {{0, 0, 5.0}};

  auto pm = train_private_naive(ctx);
  CHECK(pm.fine_tuned);
  // e = 5 - 3 = 2: both biases move by delta*e = 0.2; zero factors stay zero.
  CHECK(pm.user_bias_star == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pm.local_shared.bias.at(0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pm.user_vec_star[0] == 0.0);
  CHECK(device_score(ctx, pm, 0) == doctest::Approx(3.4).epsilon(1e-15));
  // Item 1 untouched: mu + b_u* only.
  CHECK(device_score(ctx, pm, 1) == doctest::Approx(3.2).epsilon(1e-15));
}

TEST_CASE("cluster fine-tune: updates damped by the member count") {
  ClusterAux aux;
  aux.mu = 3.0;
  aux.centroid_vec = Mat(1, 1);
  aux.centroid_bias = {0.0};
  aux.counts = {2};
  aux.membership.assign = {0, 0};  // both items share the single cluster
  aux.membership.n_items = 2;
  aux.item_seen = {1, 1};
  auto b = make_broadcast(aux);

  auto ctx = flat_ctx(b);
  ctx.private_ratings = {{0, 0, 5.0}};
  auto pm = train_private_cluster(ctx);

  // e = 2: b_u* moves the full delta*e = 0.2, the shared centroid only
  // delta*e/N = 0.1. The sibling item rides the same centroid.
  CHECK(pm.user_bias_star == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pm.local_shared.bias.at(0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(device_score(ctx, pm, 0) == doctest::Approx(3.3).epsilon(1e-15));
  CHECK(device_score(ctx, pm, 1) == doctest::Approx(3.3).epsilon(1e-15));
}

TEST_CASE("naive fine-tune: multi-epoch replay oracle") {
  auto data = testsupport::synth_small();
  auto hp = testsupport::test_hp();
  hp.epochs = 3;
  auto model = train_public(data, hp);
  auto aux = build_aux_naive(model);
  const auto& naive = std::get<NaiveAux>(aux.data);

  const int32_t user = 17;
  DeviceContext ctx;
  ctx.user = user;
  ctx.b_u = model.user_bias[user];
  auto pu = model.user_vec.row(user);
  ctx.p_u = {pu.begin(), pu.end()};
  ctx.user_seen_public = model.user_seen[user] != 0;
  ctx.aux = &aux;
  ctx.hp = hp;
  for (const Rating& r : data.ratings())
    if (r.user == user && (r.item % 2) == 0)  // an arbitrary private subset
      ctx.private_ratings.push_back(r);
  REQUIRE(ctx.private_ratings.size() >= 5);

  auto pm = train_private_naive(ctx);

  // Replay: seed local copies from the broadcast, then run the documented
  // sequential updates in the published per-device visit order.
  double bu = ctx.b_u;
  std::vector<double> p = ctx.p_u;
  std::map<int32_t, double> bias;
  std::map<int32_t, std::vector<double>> vec;
  for (const Rating& r : ctx.private_ratings)
    if (!bias.count(r.item)) {
      bias[r.item] = naive.item_bias[r.item];
      auto q = naive.item_vec.row(r.item);
      vec[r.item] = {q.begin(), q.end()};
    }
  const uint64_t order_seed =
      rng::derive(hp.seed, "device", static_cast<uint64_t>(user));
  for (int epoch = 0; epoch < hp.epochs; ++epoch)
    for (int32_t idx :
         rng::epoch_order(order_seed, epoch, ctx.private_ratings.size())) {
      const Rating& r = ctx.private_ratings[idx];
      double& bi = bias.at(r.item);
      auto& q = vec.at(r.item);
      double pred = naive.mu + bu + bi;
      for (size_t f = 0; f < p.size(); ++f) pred += q[f] * p[f];
      const double e = r.value - pred;
      bu += hp.delta * (e - hp.lambda * bu);
      bi += hp.delta * (e - hp.lambda * bi);
      for (size_t f = 0; f < p.size(); ++f)
        p[f] += hp.delta * (e * q[f] - hp.lambda * p[f]);
      for (size_t f = 0; f < p.size(); ++f)
        q[f] += hp.delta * (e * p[f] - hp.lambda * q[f]);
    }

  CHECK(pm.user_bias_star == doctest::Approx(bu).epsilon(1e-12));
  for (size_t f = 0; f < p.size(); ++f)
    CHECK(pm.user_vec_star[f] == doctest::Approx(p[f]).epsilon(1e-12));
  for (const auto& [item, bi] : bias) {
    CHECK(pm.local_shared.bias.at(item) == doctest::Approx(bi).epsilon(1e-12));
    for (size_t f = 0; f < p.size(); ++f)
      CHECK(pm.local_shared.vec.at(item)[f] ==
            doctest::Approx(vec.at(item)[f]).epsilon(1e-12));
  }
}

TEST_CASE("no private ratings: device scoring equals the public model") {
  auto data = testsupport::synth_small();
  auto model = train_public(data, testsupport::test_hp());
  auto aux = build_aux_naive(model);

  for (int32_t user : {0, 3, 57}) {
    DeviceContext ctx;
    ctx.user = user;
    ctx.b_u = model.user_bias[user];
    auto pu = model.user_vec.row(user);
    ctx.p_u = {pu.begin(), pu.end()};
    ctx.user_seen_public = model.user_seen[user] != 0;
    ctx.aux = &aux;
    ctx.hp = testsupport::test_hp();

    auto pm = train_private_naive(ctx);
    CHECK(!pm.fine_tuned);
    for (int32_t i = 0; i < model.n_items(); ++i)
      CHECK(device_score(ctx, pm, i) == model.score(user, i));  // bit-exact
  }
}

TEST_CASE("singleton clusters make the cluster variant exactly naive") {
  auto data = testsupport::synth_small();
  auto hp = testsupport::test_hp();
  auto model = train_public(data, hp);
  auto cm = kmeans_items(model, model.n_items(), 77);
  auto naive_aux = build_aux_naive(model);
  auto cluster_aux = build_aux_cluster(model, cm, /*bloom=*/false);

  const int32_t user = 23;
  DeviceContext base;
  base.user = user;
  base.b_u = model.user_bias[user];
  auto pu = model.user_vec.row(user);
  base.p_u = {pu.begin(), pu.end()};
  base.user_seen_public = model.user_seen[user] != 0;
  base.hp = hp;
  for (const Rating& r : data.ratings())
    if (r.user == user) base.private_ratings.push_back(r);
  REQUIRE(!base.private_ratings.empty());

  DeviceContext nctx = base, cctx = base;
  nctx.aux = &naive_aux;
  cctx.aux = &cluster_aux;
  auto npm = train_private_naive(nctx);
  auto cpm = train_private_cluster(cctx);

  CHECK(npm.user_bias_star == cpm.user_bias_star);  // identical bit patterns
  for (int32_t i = 0; i < model.n_items(); ++i)
    CHECK(device_score(nctx, npm, i) == device_score(cctx, cpm, i));
}

TEST_CASE("reconstruct_item_factor: truncated mixture by hand") {
  JointAux aux;
  aux.mu = 3.0;
  aux.R = 2;
  aux.item_bias = {0.25, -0.5};
  aux.cluster_vec = Mat(2, 2);
  aux.cluster_vec.at(0, 0) = 0.0;
  aux.cluster_vec.at(0, 1) = 4.0;
  aux.cluster_vec.at(1, 0) = 2.0;
  aux.cluster_vec.at(1, 1) = 0.0;
  // item 0: 0.5*c1 + 0.25*c0 ; item 1: a zero weight slot must be skipped
  aux.top_idx = {1, 0, 0, 1};
  aux.top_w = {0.5, 0.25, 0.0, 0.0};
  aux.item_seen = {1, 1};

  auto [b0, q0] = reconstruct_item_factor(aux, 0);
  CHECK(b0 == 0.25);
  CHECK(q0[0] == doctest::Approx(1.0));
  CHECK(q0[1] == doctest::Approx(1.0));
  auto [b1, q1] = reconstruct_item_factor(aux, 1);
  CHECK(b1 == -0.5);
  CHECK(q1[0] == 0.0);
  CHECK(q1[1] == 0.0);
  CHECK_THROWS_AS(reconstruct_item_factor(aux, 2), std::invalid_argument);
}

TEST_CASE("joint fine-tune: seeds from reconstructed factors then runs naive") {
  auto data = testsupport::synth_small();
  Hyperparams hp = testsupport::test_hp();
  hp.k = 4;
  hp.epochs = 4;
  auto jm = train_joint(data, hp, 6);
  auto aux = build_aux_joint(jm, 3);
  const auto& jaux = std::get<JointAux>(aux.data);

  const int32_t user = 41;
  DeviceContext ctx;
  ctx.user = user;
  ctx.b_u = jm.user_bias[user];
  auto pu = jm.user_vec.row(user);
  ctx.p_u = {pu.begin(), pu.end()};
  ctx.user_seen_public = jm.user_seen[user] != 0;
  ctx.aux = &aux;
  ctx.hp = hp;
  for (const Rating& r : data.ratings())
    if (r.user == user) ctx.private_ratings.push_back(r);
  REQUIRE(ctx.private_ratings.size() >= 3);

  auto pm = train_private_joint(ctx);

  // Same replay as the naive oracle, but local copies start from the
  // truncated reconstruction instead of broadcast item rows.
  double bu = ctx.b_u;
  std::vector<double> p = ctx.p_u;
  std::map<int32_t, double> bias;
  std::map<int32_t, std::vector<double>> vec;
  for (const Rating& r : ctx.private_ratings)
    if (!bias.count(r.item)) {
      auto [bi, qi] = reconstruct_item_factor(jaux, r.item);
      bias[r.item] = bi;
      vec[r.item] = std::move(qi);
    }
  const uint64_t order_seed =
      rng::derive(hp.seed, "device", static_cast<uint64_t>(user));
  for (int epoch = 0; epoch < hp.epochs; ++epoch)
    for (int32_t idx :
         rng::epoch_order(order_seed, epoch, ctx.private_ratings.size())) {
      const Rating& r = ctx.private_ratings[idx];
      double& bi = bias.at(r.item);
      auto& q = vec.at(r.item);
      double pred = jaux.mu + bu + bi;
      for (size_t f = 0; f < p.size(); ++f) pred += q[f] * p[f];
      const double e = r.value - pred;
      bu += hp.delta * (e - hp.lambda * bu);
      bi += hp.delta * (e - hp.lambda * bi);
      for (size_t f = 0; f < p.size(); ++f)
        p[f] += hp.delta * (e * q[f] - hp.lambda * p[f]);
      for (size_t f = 0; f < p.size(); ++f)
        q[f] += hp.delta * (e * p[f] - hp.lambda * q[f]);
    }
  CHECK(pm.user_bias_star == doctest::Approx(bu).epsilon(1e-12));
  for (size_t f = 0; f < p.size(); ++f)
    CHECK(pm.user_vec_star[f] == doctest::Approx(p[f]).epsilon(1e-12));
  for (const auto& [item, bi] : bias)
    CHECK(pm.local_shared.bias.at(item) == doctest::Approx(bi).epsilon(1e-12));

  // train_private dispatches on the aux variant.
  auto pm2 = train_private(ctx);
  CHECK(pm2.user_bias_star == pm.user_bias_star);
}

TEST_CASE("local_top_n: brute-force oracle, exclusions, cluster rejection") {
  auto data = testsupport::synth_small();
  auto model = train_public(data, testsupport::test_hp());
  auto aux = build_aux_naive(model);

  const int32_t user = 5;
  DeviceContext ctx;
  ctx.user = user;
  ctx.b_u = model.user_bias[user];
  auto pu = model.user_vec.row(user);
  ctx.p_u = {pu.begin(), pu.end()};
  ctx.user_seen_public = true;
  ctx.aux = &aux;
  ctx.hp = testsupport::test_hp();
  for (const Rating& r : data.ratings())
    if (r.user == user) ctx.private_ratings.push_back(r);
  auto pm = train_private_naive(ctx);

  std::vector<int32_t> exclude;
  for (const Rating& r : ctx.private_ratings) exclude.push_back(r.item);
  auto got = local_top_n(ctx, pm, 10, exclude);
  REQUIRE(got.size() == 10);

  std::vector<std::pair<double, int32_t>> all;
  std::set<int32_t> skip(exclude.begin(), exclude.end());
  for (int32_t i = 0; i < model.n_items(); ++i)
    if (!skip.count(i)) all.emplace_back(device_score(ctx, pm, i), i);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int j = 0; j < 10; ++j) CHECK(got[j] == all[j].second);
  for (int32_t i : got) CHECK(!skip.count(i));

  CHECK_THROWS_AS(local_top_n(ctx, pm, 0, {}), std::invalid_argument);

  auto cm = kmeans_items(model, 5, 3);
  auto caux = build_aux_cluster(model, cm, false);
  DeviceContext cctx = ctx;
  cctx.aux = &caux;
  cctx.private_ratings.clear();
  auto cpm = train_private_cluster(cctx);
  CHECK_THROWS_WITH_AS(local_top_n(cctx, cpm, 5, {}),
                       doctest::Contains("re-ranking"), std::invalid_argument);
}

TEST_CASE("rerank_top_n: identity without private data, oracle with it") {
  auto data = testsupport::synth_small();
  auto model = train_public(data, testsupport::test_hp());
  auto aux = build_aux_naive(model);
  const int32_t user = 9;

  DeviceContext ctx;
  ctx.user = user;
  ctx.b_u = model.user_bias[user];
  auto pu = model.user_vec.row(user);
  ctx.p_u = {pu.begin(), pu.end()};
  ctx.user_seen_public = model.user_seen[user] != 0;
  ctx.aux = &aux;
  ctx.hp = testsupport::test_hp();

  auto candidates = top_n_prime(model, user, 25, {});
  REQUIRE(candidates.size() == 25);

  // An un-tuned device reproduces the server ranking exactly.
  auto plain = train_private_naive(ctx);
  auto kept = rerank_top_n(candidates, ctx, plain, 10);
  for (int j = 0; j < 10; ++j) CHECK(kept[j] == candidates[j].item);

  // A tuned device must agree with manual re-scoring.
  for (const Rating& r : data.ratings())
    if (r.user == user) ctx.private_ratings.push_back(r);
  REQUIRE(!ctx.private_ratings.empty());
  auto tuned = train_private_naive(ctx);
  auto got = rerank_top_n(candidates, ctx, tuned, 10);
  std::vector<std::pair<double, int32_t>> manual;
  for (const RankedItem& c : candidates) {
    double s = std::get<NaiveAux>(aux.data).mu + tuned.user_bias_star;
    if (c.seen)
      s += c.bias + dot(std::span<const double>(c.vec),
                        std::span<const double>(tuned.user_vec_star));
    manual.emplace_back(s, c.item);
  }
  std::sort(manual.begin(), manual.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int j = 0; j < 10; ++j) CHECK(got[j] == manual[j].second);

  CHECK_THROWS_WITH_AS(rerank_top_n(candidates, ctx, tuned, 26),
                       doctest::Contains("exceeds"), std::invalid_argument);
}

TEST_CASE("device context and trainer error paths") {
  auto aux = flat_naive_aux();
  DeviceContext ctx = flat_ctx(aux);

  DeviceContext no_aux = ctx;
  no_aux.aux = nullptr;
  CHECK_THROWS_AS(no_aux.validate(), std::invalid_argument);
  CHECK_THROWS_AS(train_private(no_aux), std::invalid_argument);

  DeviceContext foreign = ctx;
  foreign.private_ratings = {{1, 0, 4.0}};  // owned by user 1, not 0
  CHECK_THROWS_WITH_AS(foreign.validate(), doctest::Contains("another user"),
                       std::invalid_argument);

  DeviceContext bad_item = ctx;
  bad_item.private_ratings = {{0, 2, 4.0}};  // aux only covers items 0..1
  CHECK_THROWS_AS(train_private_naive(bad_item), std::invalid_argument);

  // Wrong variant for the trainer.
  CHECK_THROWS_AS(train_private_cluster(ctx), std::invalid_argument);

  DeviceContext blow_up = ctx;
  blow_up.private_ratings = {{0, 0, 5.0}, {0, 1, 1.0}};
  blow_up.hp.delta = 1e200;
  blow_up.hp.epochs = 60;
  CHECK_THROWS_WITH_AS(train_private(blow_up), doctest::Contains("diverged"),
                       std::runtime_error);
}
