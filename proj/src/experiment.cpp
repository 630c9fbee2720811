#include "sp2/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "json.hpp"
#include "sp2/device.hpp"
#include "sp2/rng.hpp"
#include "sp2/serialize.hpp"
#include "sp2/server.hpp"

namespace sp2 {

// ---------------------------------------------------------------------------
// Method / config plumbing
// ---------------------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::abs_optimistic: return "abs_optimistic";
    case Method::abs_pessimistic: return "abs_pessimistic";
    case Method::only_public: return "only_public";
    case Method::naive: return "naive";
    case Method::cluster: return "cluster";
    case Method::joint: return "joint";
    case Method::dp: return "dp";
    case Method::obf_fr: return "obf_fr";
    case Method::obf_sr: return "obf_sr";
    case Method::obf_sm: return "obf_sm";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::abs_optimistic, Method::abs_pessimistic,
                   Method::only_public, Method::naive, Method::cluster,
                   Method::joint, Method::dp, Method::obf_fr, Method::obf_sr,
                   Method::obf_sm})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string MethodSpec::label() const {
  switch (method) {
    case Method::cluster:
      return "cluster[K=" + std::to_string(K) + (bloom ? ",bloom" : "") + "]";
    case Method::joint:
      return "joint[z=" + std::to_string(z) + ",R=" + std::to_string(R) + "]";
    case Method::dp:
      return "dp[beta_m=" + std::to_string(beta_m) + ",sigma=" +
             fmt_g(noise_sigma) + "]";
    case Method::obf_fr:
      return "obf_fr[peers=" + std::to_string(n_peers) + ",per_peer=" +
             std::to_string(ratings_per_peer) + "]";
    case Method::obf_sr:
      return "obf_sr[peers=" + std::to_string(n_peers) + ",frac=" +
             fmt_g(max_fraction) + "]";
    case Method::obf_sm:
      return "obf_sm[peers=" + std::to_string(n_peers) + ",frac=" +
             fmt_g(max_fraction) + "]";
    default:
      return to_string(method);
  }
}

void ExperimentConfig::validate(int64_t n_items, int64_t n_users) const {
  std::vector<std::string> bad;
  if (n_folds < 2) bad.push_back("folds must be >= 2");
  if (threads < 1) bad.push_back("threads must be >= 1");
  try {
    hp.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  try {
    beta.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  if (forced_ratio && !(*forced_ratio >= 0.0 && *forced_ratio <= 1.0))
    bad.push_back("forced_ratio must be in [0,1]");
  if (methods.empty()) bad.push_back("methods list is empty");
  for (size_t mi = 0; mi < methods.size(); ++mi) {
    const MethodSpec& ms = methods[mi];
    const std::string at = "methods[" + std::to_string(mi) + "] (" + ms.label() + "): ";
    switch (ms.method) {
      case Method::cluster:
        if (ms.K < 1) bad.push_back(at + "K must be >= 1");
        if (n_items >= 0 && ms.K > n_items)
          bad.push_back(at + "K exceeds n_items=" + std::to_string(n_items));
        break;
      case Method::joint:
        if (ms.z < 1) bad.push_back(at + "z must be >= 1");
        if (ms.R < 1 || ms.R > ms.z)
          bad.push_back(at + "R must satisfy 1 <= R <= z");
        break;
      case Method::dp:
        if (ms.beta_m < 0) bad.push_back(at + "beta_m must be >= 0");
        if (ms.noise_sigma < 0) bad.push_back(at + "noise_sigma must be >= 0");
        break;
      case Method::obf_fr:
      case Method::obf_sr:
      case Method::obf_sm:
        if (ms.n_peers < 1) bad.push_back(at + "n_peers must be >= 1");
        if (n_users >= 0 && ms.n_peers > n_users - 1)
          bad.push_back(at + "n_peers must be <= n_users - 1");
        if (ms.ratings_per_peer < 0)
          bad.push_back(at + "ratings_per_peer must be >= 0");
        if (!(ms.max_fraction >= 0.0 && ms.max_fraction <= 1.0))
          bad.push_back(at + "max_fraction must be in [0,1]");
        break;
      default:
        break;
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::invalid_argument(msg);
  }
}

ExperimentConfig config_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    cfg.dataset_path = d.value("path", std::string());
    const std::string fmt = d.value("format", std::string("tsv"));
    if (fmt == "tsv")
      cfg.format = TableFormat::tsv;
    else if (fmt == "csv")
      cfg.format = TableFormat::csv;
    else
      throw std::invalid_argument("config: unknown dataset format '" + fmt + "'");
  }
  cfg.n_folds = j.value("folds", cfg.n_folds);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.hypothesis = hypothesis_from_string(
      j.value("hypothesis", to_string(cfg.hypothesis)));
  if (j.contains("beta")) {
    const auto& b = j.at("beta");
    const std::string label = b.value("label", std::string());
    if (!label.empty() && label != "custom") cfg.beta = BetaConfig::named(label);
    if (b.contains("alpha") || b.contains("beta")) {
      cfg.beta.alpha = b.value("alpha", cfg.beta.alpha);
      cfg.beta.beta = b.value("beta", cfg.beta.beta);
      if (label.empty()) cfg.beta.label = "custom";
    }
  }
  if (j.contains("hyperparams")) {
    const auto& h = j.at("hyperparams");
    cfg.hp.k = h.value("k", cfg.hp.k);
    cfg.hp.delta = h.value("delta", cfg.hp.delta);
    cfg.hp.lambda = h.value("lambda", cfg.hp.lambda);
    cfg.hp.epochs = h.value("epochs", cfg.hp.epochs);
    cfg.hp.init_std = h.value("init_std", cfg.hp.init_std);
  }
  cfg.hp.seed = cfg.seed;
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j.at("methods")) {
      MethodSpec ms;
      ms.method = method_from_string(m.at("method").get<std::string>());
      ms.K = m.value("K", ms.K);
      ms.bloom = m.value("bloom", ms.bloom);
      ms.z = m.value("z", ms.z);
      ms.R = m.value("R", ms.R);
      ms.beta_m = m.value("beta_m", ms.beta_m);
      ms.noise_sigma = m.value("noise_sigma", ms.noise_sigma);
      ms.n_peers = m.value("n_peers", ms.n_peers);
      ms.ratings_per_peer = m.value("ratings_per_peer", ms.ratings_per_peer);
      ms.max_fraction = m.value("max_fraction", ms.max_fraction);
      cfg.methods.push_back(ms);
    }
  }
  cfg.out_dir = j.value("out", cfg.out_dir);
  cfg.clamp_predictions = j.value("clamp_predictions", cfg.clamp_predictions);
  cfg.threads = j.value("threads", cfg.threads);
  if (j.contains("forced_ratio")) cfg.forced_ratio = j.at("forced_ratio").get<double>();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"]["path"] = cfg.dataset_path;
  j["dataset"]["format"] = cfg.format == TableFormat::tsv ? "tsv" : "csv";
  j["folds"] = cfg.n_folds;
  j["seed"] = cfg.seed;
  j["hypothesis"] = to_string(cfg.hypothesis);
  j["beta"] = {{"label", cfg.beta.label},
               {"alpha", cfg.beta.alpha},
               {"beta", cfg.beta.beta}};
  j["hyperparams"] = {{"k", cfg.hp.k},
                      {"delta", cfg.hp.delta},
                      {"lambda", cfg.hp.lambda},
                      {"epochs", cfg.hp.epochs},
                      {"init_std", cfg.hp.init_std}};
  j["methods"] = nlohmann::json::array();
  for (const MethodSpec& ms : cfg.methods) {
    nlohmann::json m;
    m["method"] = to_string(ms.method);
    switch (ms.method) {
      case Method::cluster:
        m["K"] = ms.K;
        m["bloom"] = ms.bloom;
        break;
      case Method::joint:
        m["z"] = ms.z;
        m["R"] = ms.R;
        break;
      case Method::dp:
        m["beta_m"] = ms.beta_m;
        m["noise_sigma"] = ms.noise_sigma;
        break;
      case Method::obf_fr:
        m["n_peers"] = ms.n_peers;
        m["ratings_per_peer"] = ms.ratings_per_peer;
        break;
      case Method::obf_sr:
      case Method::obf_sm:
        m["n_peers"] = ms.n_peers;
        m["max_fraction"] = ms.max_fraction;
        break;
      default:
        break;
    }
    j["methods"].push_back(m);
  }
  j["out"] = cfg.out_dir;
  j["clamp_predictions"] = cfg.clamp_predictions;
  j["threads"] = cfg.threads;
  if (cfg.forced_ratio) j["forced_ratio"] = *cfg.forced_ratio;
  return j.dump(2) + "\n";
}

std::pair<double, double> mean_stddev(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

void parallel_for(int threads, int64_t n,
                  const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    while (true) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = static_cast<int>(std::min<int64_t>(threads, n));
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Fold evaluation
// ---------------------------------------------------------------------------

namespace {

// Server-side stand-in when the public partition is empty: predicts the scale
// midpoint everywhere ("global mean of nothing").
PublicModel midpoint_model(const RatingsDataset& shape, int k, double midpoint) {
  PublicModel m;
  m.mu = midpoint;
  m.user_bias.assign(shape.n_users(), 0.0);
  m.item_bias.assign(shape.n_items(), 0.0);
  m.user_vec = Mat(shape.n_users(), k);
  m.item_vec = Mat(shape.n_items(), k);
  m.user_seen.assign(shape.n_users(), 0);
  m.item_seen.assign(shape.n_items(), 0);
  return m;
}

JointModel midpoint_joint_model(const RatingsDataset& shape, int k, int z,
                                double midpoint) {
  JointModel m;
  m.mu = midpoint;
  m.user_bias.assign(shape.n_users(), 0.0);
  m.item_bias.assign(shape.n_items(), 0.0);
  m.user_vec = Mat(shape.n_users(), k);
  m.cluster_vec = Mat(z, k);
  m.item_weight = Mat(shape.n_items(), z);
  m.user_seen.assign(shape.n_users(), 0);
  m.item_seen.assign(shape.n_items(), 0);
  return m;
}

// User-side parameter source: PublicModel or JointModel.
struct UserSide {
  const std::vector<double>* bias;
  const Mat* vec;
  const std::vector<uint8_t>* seen;
};

// Fine-tunes one device per test user and fills predictions for the test
// ratings (indices into `test`).
void eval_devices(const RatingsDataset& test, const PrivacyPartition& partition,
                  const UserSide& side, const AuxBroadcast& aux,
                  const Hyperparams& hp_fold, bool clamp,
                  const RatingScale& scale, std::vector<double>& preds) {
  const int32_t nu = test.n_users();
  std::vector<std::vector<int32_t>> test_idx(nu);
  for (size_t j = 0; j < test.size(); ++j)
    test_idx[test.ratings()[j].user].push_back(static_cast<int32_t>(j));

  for (int32_t u = 0; u < nu; ++u) {
    if (test_idx[u].empty()) continue;
    DeviceContext ctx;
    ctx.user = u;
    ctx.b_u = (*side.bias)[u];
    auto pv = side.vec->row(u);
    ctx.p_u.assign(pv.begin(), pv.end());
    ctx.user_seen_public = (*side.seen)[u] != 0;
    ctx.aux = &aux;
    if (u < static_cast<int32_t>(partition.private_per_user.size()))
      ctx.private_ratings = partition.private_per_user[u];
    ctx.hp = hp_fold;
    const PrivateModel pm = train_private(ctx);
    for (int32_t j : test_idx[u]) {
      double s = device_score(ctx, pm, test.ratings()[j].item);
      if (clamp) s = scale.clamp(s);
      preds[j] = s;
    }
  }
}

struct FoldOutput {
  std::vector<FoldMethodResult> rows;
  double realized = 0.0;
  std::string digest;
  std::string error;
};

FoldOutput run_fold(const ExperimentConfig& cfg, const FoldSplit& fold) {
  FoldOutput out;
  const RatingsDataset& train = fold.train;
  const RatingsDataset& test = fold.test;
  const RatingScale scale = train.scale();

  Hyperparams hp_fold = cfg.hp;
  hp_fold.seed = rng::derive(cfg.seed, "fold",
                             static_cast<uint64_t>(fold.fold_index));
  const uint64_t alloc_seed =
      rng::derive(cfg.seed, "alloc", static_cast<uint64_t>(fold.fold_index));

  PrivacyPartition partition;
  if (cfg.forced_ratio) {
    partition = cfg.hypothesis == Hypothesis::H1
                    ? allocate_h1_const(train, *cfg.forced_ratio, alloc_seed)
                    : allocate_h2_const(train, *cfg.forced_ratio, alloc_seed);
  } else {
    partition = cfg.hypothesis == Hypothesis::H1
                    ? allocate_h1(train, cfg.beta, alloc_seed)
                    : allocate_h2(train, cfg.beta, alloc_seed);
  }
  out.realized = partition.realized_private_fraction(train.size());

  const bool public_empty = partition.public_set.empty();
  if (public_empty)
    std::fprintf(stderr,
                 "[sp2] fold %d: public partition is EMPTY; server-side models "
                 "fall back to the scale midpoint %.3f\n",
                 fold.fold_index, scale.midpoint());

  // Lazily built, shared across methods within the fold (identical seeds keep
  // the evaluation paired).
  std::optional<PublicModel> public_mf;   // on the public partition
  std::optional<PublicModel> full_mf;     // on the full training fold
  std::optional<UserMeanModel> umean;
  std::optional<AuxBroadcast> naive_aux;
  std::vector<std::pair<MethodSpec, JointModel>> joint_models;
  std::vector<const AuxBroadcast*> digest_broadcasts;
  std::vector<std::unique_ptr<AuxBroadcast>> owned_broadcasts;

  auto get_public_mf = [&]() -> const PublicModel& {
    if (!public_mf)
      public_mf = public_empty
                      ? midpoint_model(train, hp_fold.k, scale.midpoint())
                      : train_public(partition.public_set, hp_fold);
    return *public_mf;
  };
  auto get_full_mf = [&]() -> const PublicModel& {
    if (!full_mf) full_mf = train_public(train, hp_fold);
    return *full_mf;
  };
  auto get_naive_aux = [&]() -> const AuxBroadcast& {
    if (!naive_aux) naive_aux = build_aux_naive(get_public_mf());
    return *naive_aux;
  };

  // Every broadcast and SP2 model this fold produces participates in the
  // privacy digest; the digest is recomputed after the device phase and must
  // be unchanged.
  TopNRequestLog request_log;
  auto make_state = [&]() {
    ServerState st;
    st.public_data = &partition.public_set;
    if (public_mf) st.public_model = &*public_mf;
    if (!joint_models.empty()) st.joint_model = &joint_models.front().second;
    st.broadcasts = digest_broadcasts;
    st.request_log = &request_log;
    return st;
  };

  std::vector<double> truths(test.size());
  for (size_t j = 0; j < test.size(); ++j) truths[j] = test.ratings()[j].value;

  // Pass 1: build all server-side state the methods need.
  for (const MethodSpec& ms : cfg.methods) {
    switch (ms.method) {
      case Method::naive:
        get_public_mf();
        break;
      case Method::cluster:
        get_public_mf();
        break;
      case Method::joint: {
        JointModel jm = public_empty
                            ? midpoint_joint_model(train, hp_fold.k, ms.z,
                                                   scale.midpoint())
                            : train_joint(partition.public_set, hp_fold, ms.z);
        joint_models.emplace_back(ms, std::move(jm));
        break;
      }
      case Method::only_public:
        get_public_mf();
        break;
      default:
        break;
    }
  }

  // SP2 aux broadcasts (built after all models exist, before any device runs).
  struct SP2Plan {
    size_t method_index;
    const AuxBroadcast* aux;
    AuxSizeBreakdown formula;
    const JointModel* joint = nullptr;  // user-side source for joint
  };
  std::vector<SP2Plan> sp2_plans;
  size_t joint_cursor = 0;
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodSpec& ms = cfg.methods[mi];
    if (ms.method == Method::naive) {
      const auto& aux = get_naive_aux();
      sp2_plans.push_back(
          {mi, &aux,
           aux_size_bytes(AuxVariant::naive, hp_fold.k, train.n_items())});
    } else if (ms.method == Method::cluster) {
      const auto& model = get_public_mf();
      ClusterModel cm = kmeans_items(
          model, ms.K,
          rng::derive(hp_fold.seed, "kmeans", static_cast<uint64_t>(ms.K)));
      owned_broadcasts.push_back(std::make_unique<AuxBroadcast>(
          build_aux_cluster(model, cm, ms.bloom)));
      sp2_plans.push_back(
          {mi, owned_broadcasts.back().get(),
           aux_size_bytes(AuxVariant::cluster, hp_fold.k, train.n_items(), ms.K,
                          0, 0,
                          ms.bloom ? bloom_bits_per_item_for_fp(0.01) : 0.0)});
    } else if (ms.method == Method::joint) {
      const JointModel& jm = joint_models[joint_cursor++].second;
      owned_broadcasts.push_back(
          std::make_unique<AuxBroadcast>(build_aux_joint(jm, ms.R)));
      sp2_plans.push_back(
          {mi, owned_broadcasts.back().get(),
           aux_size_bytes(AuxVariant::joint, hp_fold.k, train.n_items(), 0,
                          ms.z, ms.R),
           &jm});
    }
  }
  if (naive_aux) digest_broadcasts.push_back(&*naive_aux);
  for (const auto& b : owned_broadcasts) digest_broadcasts.push_back(b.get());

  const std::string digest_before = privacy_digest(make_state());

  // Pass 2: evaluate.
  out.rows.reserve(cfg.methods.size());
  size_t plan_cursor = 0;
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodSpec& ms = cfg.methods[mi];
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> preds(test.size(), 0.0);
    FoldMethodResult row;
    row.fold = fold.fold_index;
    row.method = ms.label();

    auto score_model = [&](const PublicModel& m) {
      for (size_t j = 0; j < test.size(); ++j) {
        const Rating& r = test.ratings()[j];
        double s = m.score(r.user, r.item);
        if (cfg.clamp_predictions) s = scale.clamp(s);
        preds[j] = s;
      }
    };

    switch (ms.method) {
      case Method::abs_optimistic:
        score_model(get_full_mf());
        break;
      case Method::abs_pessimistic: {
        if (!umean) umean = abs_pessimistic(train);
        for (size_t j = 0; j < test.size(); ++j) {
          double s = umean->score(test.ratings()[j].user);
          if (cfg.clamp_predictions) s = scale.clamp(s);
          preds[j] = s;
        }
        break;
      }
      case Method::only_public:
        score_model(get_public_mf());
        break;
      case Method::dp: {
        DPConfig dc{ms.beta_m, ms.noise_sigma,
                    rng::derive(hp_fold.seed, "dp", static_cast<uint64_t>(mi))};
        score_model(dp_baseline(train, dc, hp_fold));
        break;
      }
      case Method::obf_fr:
      case Method::obf_sr:
      case Method::obf_sm: {
        ObfuscationConfig oc;
        oc.policy = ms.method == Method::obf_fr   ? ObfuscationPolicy::FR
                    : ms.method == Method::obf_sr ? ObfuscationPolicy::SR
                                                  : ObfuscationPolicy::SM;
        oc.n_peers = ms.n_peers;
        oc.ratings_per_peer = ms.ratings_per_peer;
        oc.max_fraction = ms.max_fraction;
        oc.seed = rng::derive(hp_fold.seed, "obf", static_cast<uint64_t>(mi));
        score_model(train_public(obfuscate(train, oc), hp_fold));
        break;
      }
      case Method::naive:
      case Method::cluster:
      case Method::joint: {
        const SP2Plan& plan = sp2_plans[plan_cursor++];
        UserSide side{};
        if (plan.joint) {
          side = {&plan.joint->user_bias, &plan.joint->user_vec,
                  &plan.joint->user_seen};
        } else {
          const PublicModel& m = get_public_mf();
          side = {&m.user_bias, &m.user_vec, &m.user_seen};
        }
        eval_devices(test, partition, side, *plan.aux, hp_fold,
                     cfg.clamp_predictions, scale, preds);
        row.aux_formula_bytes = plan.formula.total();
        row.aux_payload_bytes = plan.aux->payload_bytes;
        break;
      }
    }

    row.rmse = rmse(preds, truths);
    row.ndcg = ndcg_at_10(test.ratings(), preds, test.n_users());
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    out.rows.push_back(std::move(row));
  }

  const std::string digest_after = privacy_digest(make_state());
  if (digest_before != digest_after)
    throw std::runtime_error(
        "privacy digest changed across the device phase (fold " +
        std::to_string(fold.fold_index) + "): server state was mutated");
  out.digest = digest_after;
  return out;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg,
                         const RatingsDataset& data) {
  cfg.validate(data.n_items(), data.n_users());
  auto folds = kfold(data, cfg.n_folds, rng::derive(cfg.seed, "folds"));

  RunReport report;
  report.config = cfg;
  report.dataset_mean = data.mean_rating();
  report.realized_private_fraction.assign(cfg.n_folds, 0.0);
  report.fold_digests.assign(cfg.n_folds, "");
  report.fold_errors.assign(cfg.n_folds, "");
  std::vector<FoldOutput> outputs(cfg.n_folds);

  parallel_for(cfg.threads, cfg.n_folds, [&](int64_t fi) {
    try {
      outputs[fi] = run_fold(cfg, folds[fi]);
    } catch (const std::exception& e) {
      outputs[fi].error = e.what();
      outputs[fi].rows.clear();
    }
  });

  for (int fi = 0; fi < cfg.n_folds; ++fi) {
    report.realized_private_fraction[fi] = outputs[fi].realized;
    report.fold_digests[fi] = outputs[fi].digest;
    report.fold_errors[fi] = outputs[fi].error;
    for (auto& row : outputs[fi].rows) report.rows.push_back(std::move(row));
  }

  // Aggregates in configured method order, over folds that completed.
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string label = cfg.methods[mi].label();
    std::vector<double> rmses, ndcgs;
    for (int fi = 0; fi < cfg.n_folds; ++fi) {
      if (!outputs[fi].error.empty()) continue;
      const auto& row = outputs[fi].rows[mi];
      rmses.push_back(row.rmse);
      ndcgs.push_back(row.ndcg);
    }
    MethodAggregate agg;
    agg.method = label;
    std::tie(agg.rmse_mean, agg.rmse_std) = mean_stddev(rmses);
    std::tie(agg.ndcg_mean, agg.ndcg_std) = mean_stddev(ndcgs);
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report emission (no wall-clock content: files must be byte-reproducible)
// ---------------------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string report_csv(const RunReport& report) {
  std::string s = "fold,method,rmse,ndcg,aux_formula_bytes,aux_payload_bytes\n";
  for (const auto& row : report.rows) {
    s += std::to_string(row.fold) + "," + row.method + "," + fmt17(row.rmse) +
         "," + fmt17(row.ndcg) + "," + std::to_string(row.aux_formula_bytes) +
         "," + std::to_string(row.aux_payload_bytes) + "\n";
  }
  return s;
}

std::string report_json(const RunReport& report) {
  nlohmann::json j;
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : report.aggregates)
    j["aggregates"].push_back({{"method", a.method},
                               {"rmse_mean", a.rmse_mean},
                               {"rmse_std", a.rmse_std},
                               {"ndcg_mean", a.ndcg_mean},
                               {"ndcg_std", a.ndcg_std}});
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back({{"fold", r.fold},
                         {"method", r.method},
                         {"rmse", r.rmse},
                         {"ndcg", r.ndcg},
                         {"aux_formula_bytes", r.aux_formula_bytes},
                         {"aux_payload_bytes", r.aux_payload_bytes}});
  j["realized_private_fraction"] = report.realized_private_fraction;
  j["fold_digests"] = report.fold_digests;
  bool any_error = false;
  for (const auto& e : report.fold_errors) any_error |= !e.empty();
  if (any_error) j["fold_errors"] = report.fold_errors;
  j["dataset_mean"] = report.dataset_mean;
  return j.dump(2) + "\n";
}

std::string report_manifest(const RunReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["tool"] = "sp2";
  j["config"] = nlohmann::json::parse(config_to_json(report.config));
  j["fold_digests"] = report.fold_digests;
  j["realized_private_fraction"] = report.realized_private_fraction;
  return j.dump(2) + "\n";
}

void write_report_files(const RunReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(report.config.out_dir);
  write_file_text((fs::path(report.config.out_dir) / "report.csv").string(),
                  report_csv(report));
  write_file_text((fs::path(report.config.out_dir) / "report.json").string(),
                  report_json(report));
  write_file_text((fs::path(report.config.out_dir) / "manifest.json").string(),
                  report_manifest(report));
}

// ---------------------------------------------------------------------------
// Sweeps and ablations
// ---------------------------------------------------------------------------

std::vector<SweepPoint> sweep_privacy_ratios(const ExperimentConfig& cfg,
                                             const RatingsDataset& data,
                                             const std::vector<double>& grid) {
  std::vector<SweepPoint> points;
  for (double ratio : grid) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
      throw std::invalid_argument("privacy sweep: ratio must be in [0,1]");
    ExperimentConfig sub = cfg;
    if (ratio <= 0.0 || ratio >= 1.0) {
      // Degenerate beta: forced constant allocation at the endpoint.
      sub.forced_ratio = ratio;
    } else {
      constexpr double kConcentration = 4.0;
      sub.beta = BetaConfig::custom(ratio * kConcentration,
                                    (1.0 - ratio) * kConcentration);
      sub.beta.label = "mean" + fmt_g(ratio);
    }
    RunReport rep = run_experiment(sub, data);
    const auto [realized, _] =
        mean_stddev(rep.realized_private_fraction);
    for (const auto& agg : rep.aggregates) {
      SweepPoint p;
      p.target_ratio = ratio;
      p.method = agg.method;
      p.realized_ratio = realized;
      p.rmse = agg.rmse_mean;
      p.ndcg = agg.ndcg_mean;
      points.push_back(std::move(p));
    }
  }
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string s = "target_ratio,method,realized_ratio,rmse,ndcg\n";
  for (const auto& p : points)
    s += fmt_g(p.target_ratio) + "," + p.method + "," + fmt17(p.realized_ratio) +
         "," + fmt17(p.rmse) + "," + fmt17(p.ndcg) + "\n";
  return s;
}

std::vector<AblationRow> ablate_clusters(const ExperimentConfig& cfg,
                                         const RatingsDataset& data,
                                         const std::vector<int>& K_values) {
  for (int K : K_values)
    if (K < 1 || K > data.n_items())
      throw std::invalid_argument("ablation: K=" + std::to_string(K) +
                                  " outside [1, n_items]");
  // Joint training cost grows linearly in z; very large matched-z rows are
  // omitted rather than silently taking hours.
  constexpr int kJointZCap = 256;
  int R = 3;
  for (const MethodSpec& ms : cfg.methods)
    if (ms.method == Method::joint) R = ms.R;

  std::vector<AblationRow> rows;
  for (int K : K_values) {
    ExperimentConfig sub = cfg;
    sub.methods.clear();
    sub.methods.push_back({.method = Method::naive});
    sub.methods.push_back({.method = Method::cluster, .K = K});
    if (K >= R && K <= kJointZCap)
      sub.methods.push_back({.method = Method::joint, .z = K, .R = R});
    RunReport rep = run_experiment(sub, data);
    for (size_t mi = 0; mi < sub.methods.size(); ++mi) {
      AblationRow row;
      row.K = K;
      row.method = sub.methods[mi].method == Method::naive    ? "naive"
                   : sub.methods[mi].method == Method::cluster ? "cluster"
                                                                : "joint";
      row.rmse = rep.aggregates[mi].rmse_mean;
      switch (sub.methods[mi].method) {
        case Method::naive:
          row.aux_formula_bytes =
              aux_size_bytes(AuxVariant::naive, cfg.hp.k, data.n_items())
                  .total();
          break;
        case Method::cluster:
          row.aux_formula_bytes =
              aux_size_bytes(AuxVariant::cluster, cfg.hp.k, data.n_items(), K)
                  .total();
          break;
        default:
          row.aux_formula_bytes =
              aux_size_bytes(AuxVariant::joint, cfg.hp.k, data.n_items(), 0, K,
                             R)
                  .total();
          break;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string s = "K,method,rmse,aux_formula_bytes\n";
  for (const auto& r : rows)
    s += std::to_string(r.K) + "," + r.method + "," + fmt17(r.rmse) + "," +
         std::to_string(r.aux_formula_bytes) + "\n";
  return s;
}

}  // namespace sp2
