#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "sp2/experiment.hpp"
#include "sp2/serialize.hpp"
#include "support/synth.hpp"

using namespace sp2;

namespace {

ExperimentConfig smoke_config() {
  ExperimentConfig cfg;
  cfg.n_folds = 2;
  cfg.seed = 4242;
  cfg.hypothesis = Hypothesis::H1;
  cfg.beta = BetaConfig::named("balanced");
  cfg.hp.k = 8;
  cfg.hp.delta = 0.02;
  cfg.hp.lambda = 0.02;
  cfg.hp.epochs = 5;
  cfg.hp.init_std = 0.1;
  cfg.methods = {MethodSpec{.method = Method::abs_pessimistic},
                 MethodSpec{.method = Method::only_public},
                 MethodSpec{.method = Method::naive}};
  return cfg;
}

const FoldMethodResult& row_of(const RunReport& r, int fold,
                               const std::string& method) {
  for (const auto& row : r.rows)
    if (row.fold == fold && row.method == method) return row;
  throw std::runtime_error("missing row " + method);
}

std::string slurp(const std::filesystem::path& p) {
  return read_file_text(p.string());
}

bool no_fold_errors(const RunReport& r) {
  for (const auto& e : r.fold_errors)
    if (!e.empty()) return false;
  return true;
}

}  // namespace

TEST_CASE("method names and labels") {
  for (Method m : {Method::abs_optimistic, Method::abs_pessimistic,
                   Method::only_public, Method::naive, Method::cluster,
                   Method::joint, Method::dp, Method::obf_fr, Method::obf_sr,
                   Method::obf_sm})
    CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("popcorn"), std::invalid_argument);

  CHECK(MethodSpec{.method = Method::naive}.label() == "naive");
  CHECK(MethodSpec{.method = Method::cluster, .K = 50}.label() == "cluster[K=50]");
  CHECK(MethodSpec{.method = Method::cluster, .K = 50, .bloom = true}.label() ==
        "cluster[K=50,bloom]");
  CHECK(MethodSpec{.method = Method::joint, .z = 50, .R = 3}.label() ==
        "joint[z=50,R=3]");
  CHECK(MethodSpec{.method = Method::dp, .beta_m = 15, .noise_sigma = 0.5}
            .label() == "dp[beta_m=15,sigma=0.5]");
  CHECK(MethodSpec{.method = Method::obf_fr, .n_peers = 10,
                   .ratings_per_peer = 10}
            .label() == "obf_fr[peers=10,per_peer=10]");
  CHECK(MethodSpec{.method = Method::obf_sm, .n_peers = 4, .max_fraction = 0.25}
            .label() == "obf_sm[peers=4,frac=0.25]");
}

TEST_CASE("config json: round trip, defaults, and bad input") {
  ExperimentConfig cfg = smoke_config();
  cfg.dataset_path = "data/ratings.tsv";
  cfg.methods.push_back(MethodSpec{.method = Method::cluster, .K = 12});
  cfg.methods.push_back(
      MethodSpec{.method = Method::dp, .beta_m = 4, .noise_sigma = 0.25});
  cfg.out_dir = "/tmp/somewhere";
  cfg.clamp_predictions = true;
  cfg.threads = 3;
  cfg.forced_ratio = 0.25;

  auto back = config_from_json(config_to_json(cfg));
  CHECK(back.dataset_path == cfg.dataset_path);
  CHECK(back.n_folds == cfg.n_folds);
  CHECK(back.seed == cfg.seed);
  CHECK(back.hp.seed == cfg.seed);  // experiment seed drives training
  CHECK(back.hypothesis == cfg.hypothesis);
  CHECK(back.beta.alpha == cfg.beta.alpha);
  CHECK(back.beta.label == cfg.beta.label);
  CHECK(back.hp.k == cfg.hp.k);
  CHECK(back.hp.epochs == cfg.hp.epochs);
  REQUIRE(back.methods.size() == cfg.methods.size());
  CHECK(back.methods[3].method == Method::cluster);
  CHECK(back.methods[3].K == 12);
  CHECK(back.methods[4].beta_m == 4);
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.clamp_predictions);
  CHECK(back.threads == 3);
  REQUIRE(back.forced_ratio.has_value());
  CHECK(*back.forced_ratio == 0.25);

  // A minimal document falls back to defaults.
  auto bare = config_from_json("{}");
  CHECK(bare.n_folds == 5);
  CHECK(bare.seed == 42);
  CHECK(bare.hp.k == 100);
  CHECK(bare.methods.empty());
  CHECK(!bare.forced_ratio);

  CHECK_THROWS_AS(config_from_json("{"), nlohmann::json::exception);
  CHECK_THROWS_AS(
      config_from_json(R"({"dataset":{"path":"x","format":"xml"}})"),
      std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"methods":[{"method":"nope"}]})"),
                  std::invalid_argument);
}

TEST_CASE("config validation collects every violation at once") {
  ExperimentConfig cfg;
  cfg.n_folds = 1;
  cfg.threads = 0;
  cfg.hp.delta = 0.0;
  cfg.forced_ratio = 1.5;
  cfg.methods = {MethodSpec{.method = Method::cluster, .K = 0},
                 MethodSpec{.method = Method::joint, .z = 4, .R = 9}};
  try {
    cfg.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("folds must be >= 2") != std::string::npos);
    CHECK(msg.find("threads must be >= 1") != std::string::npos);
    CHECK(msg.find("delta must be > 0") != std::string::npos);
    CHECK(msg.find("forced_ratio") != std::string::npos);
    CHECK(msg.find("K must be >= 1") != std::string::npos);
    CHECK(msg.find("R must satisfy") != std::string::npos);
  }

  // Dataset-dependent checks engage only when dimensions are supplied.
  ExperimentConfig big = smoke_config();
  big.methods = {MethodSpec{.method = Method::cluster, .K = 500}};
  big.validate();  // fine in the abstract
  CHECK_THROWS_WITH_AS(big.validate(150, 120), doctest::Contains("exceeds"),
                       std::invalid_argument);
  ExperimentConfig peers = smoke_config();
  peers.methods = {MethodSpec{.method = Method::obf_fr, .n_peers = 500}};
  CHECK_THROWS_WITH_AS(peers.validate(150, 120),
                       doctest::Contains("n_users - 1"), std::invalid_argument);
}

TEST_CASE("mean_stddev: hand values") {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  auto [m, s] = mean_stddev(xs);
  CHECK(m == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
  auto [m1, s1] = mean_stddev(std::vector<double>{7.0});
  CHECK(m1 == 7.0);
  CHECK(s1 == 0.0);
  auto [m0, s0] = mean_stddev({});
  CHECK(m0 == 0.0);
  CHECK(s0 == 0.0);
}

TEST_CASE("parallel_for: covers the range once, propagates exceptions") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(8, 257, [&](int64_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);

  std::vector<std::atomic<int>> again(5);
  parallel_for(16, 5, [&](int64_t i) { again[i]++; });  // more threads than work
  for (auto& h : again) CHECK(h.load() == 1);

  parallel_for(4, 0, [&](int64_t) { FAIL("must not run"); });

  CHECK_THROWS_WITH_AS(
      parallel_for(4, 100,
                   [&](int64_t i) {
                     if (i == 57) throw std::runtime_error("slot 57 exploded");
                   }),
      doctest::Contains("slot 57"), std::runtime_error);
}

TEST_CASE("run_experiment: smoke, shape, and cross-thread determinism") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();

  auto report = run_experiment(cfg, data);
  REQUIRE(report.rows.size() == 2 * 3);
  REQUIRE(report.fold_digests.size() == 2);
  REQUIRE(report.realized_private_fraction.size() == 2);
  CHECK(no_fold_errors(report));
  CHECK(report.dataset_mean == doctest::Approx(data.mean_rating()));
  for (const auto& row : report.rows) {
    CHECK(std::isfinite(row.rmse));
    CHECK(row.rmse > 0.0);
    CHECK(row.rmse < 4.0);
    CHECK(row.ndcg > 0.0);
    CHECK(row.ndcg <= 1.0);
  }
  for (const auto& d : report.fold_digests) CHECK(d.size() == 64);
  for (double f : report.realized_private_fraction) {
    CHECK(f > 0.05);
    CHECK(f < 0.95);
  }
  REQUIRE(report.aggregates.size() == 3);
  // Aggregates really are the fold means.
  for (const auto& agg : report.aggregates) {
    std::vector<double> rmses;
    for (const auto& row : report.rows)
      if (row.method == agg.method) rmses.push_back(row.rmse);
    auto [m, s] = mean_stddev(rmses);
    CHECK(agg.rmse_mean == doctest::Approx(m).epsilon(1e-15));
    CHECK(agg.rmse_std == doctest::Approx(s).epsilon(1e-15));
  }
  // Fine-tuning on private data helps over ignoring it.
  const auto& agg_naive = report.aggregates[2];
  const auto& agg_public = report.aggregates[1];
  CHECK(agg_naive.method == "naive");
  CHECK(agg_naive.rmse_mean < agg_public.rmse_mean);

  // Identical reruns and thread counts reproduce the same bytes.
  auto again = run_experiment(cfg, data);
  CHECK(report_csv(again) == report_csv(report));
  CHECK(again.fold_digests == report.fold_digests);
  ExperimentConfig mt = cfg;
  mt.threads = 3;
  auto threaded = run_experiment(mt, data);
  CHECK(report_csv(threaded) == report_csv(report));
  CHECK(threaded.fold_digests == report.fold_digests);
}

TEST_CASE("run_experiment: zero private ratio makes naive equal only_public") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {MethodSpec{.method = Method::only_public},
                 MethodSpec{.method = Method::naive}};
  cfg.forced_ratio = 0.0;

  auto report = run_experiment(cfg, data);
  CHECK(no_fold_errors(report));
  for (int fold = 0; fold < cfg.n_folds; ++fold) {
    const auto& pub = row_of(report, fold, "only_public");
    const auto& nai = row_of(report, fold, "naive");
    CHECK(nai.rmse == pub.rmse);  // bit-exact: no device deviates from public
    CHECK(nai.ndcg == pub.ndcg);
  }
  for (double f : report.realized_private_fraction) CHECK(f == 0.0);

  // Formula bytes on the device rows; zero for model-only baselines.
  const auto& nai0 = row_of(report, 0, "naive");
  CHECK(nai0.aux_formula_bytes ==
        aux_size_bytes(AuxVariant::naive, cfg.hp.k, data.n_items()).total());
  CHECK(nai0.aux_payload_bytes > 0);
  CHECK(row_of(report, 0, "only_public").aux_formula_bytes == 0);
}

TEST_CASE("run_experiment: fully private partition still completes") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {MethodSpec{.method = Method::only_public},
                 MethodSpec{.method = Method::naive}};
  cfg.forced_ratio = 1.0;

  auto report = run_experiment(cfg, data);
  CHECK(no_fold_errors(report));
  for (double f : report.realized_private_fraction) CHECK(f == 1.0);
  for (const auto& row : report.rows) CHECK(std::isfinite(row.rmse));
  // With everything private the devices see a flat fallback model but still
  // fine-tune; naive must beat the public-only scorer.
  CHECK(row_of(report, 0, "naive").rmse <
        row_of(report, 0, "only_public").rmse);
}

TEST_CASE("run_experiment: every method kind emits a row") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {
      MethodSpec{.method = Method::abs_optimistic},
      MethodSpec{.method = Method::abs_pessimistic},
      MethodSpec{.method = Method::only_public},
      MethodSpec{.method = Method::naive},
      MethodSpec{.method = Method::cluster, .K = 6},
      MethodSpec{.method = Method::cluster, .K = 6, .bloom = true},
      MethodSpec{.method = Method::joint, .z = 6, .R = 2},
      MethodSpec{.method = Method::dp, .beta_m = 2, .noise_sigma = 0.25},
      MethodSpec{.method = Method::obf_fr, .n_peers = 3, .ratings_per_peer = 3},
      MethodSpec{.method = Method::obf_sm, .n_peers = 3, .max_fraction = 0.2},
  };
  auto report = run_experiment(cfg, data);
  CHECK(no_fold_errors(report));
  REQUIRE(report.rows.size() == cfg.methods.size() * 2);
  // Fold-major rows in configured method order.
  for (int fold = 0; fold < 2; ++fold)
    for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      const auto& row = report.rows[fold * cfg.methods.size() + mi];
      CHECK(row.fold == fold);
      CHECK(row.method == cfg.methods[mi].label());
      CHECK(std::isfinite(row.rmse));
      CHECK(std::isfinite(row.ndcg));
    }
  // The cluster aux is smaller than the naive aux, bloom smaller than plain.
  const auto& naive_row = row_of(report, 0, "naive");
  const auto& plain_row = row_of(report, 0, "cluster[K=6]");
  const auto& bloom_row = row_of(report, 0, "cluster[K=6,bloom]");
  CHECK(plain_row.aux_formula_bytes < naive_row.aux_formula_bytes);
  CHECK(bloom_row.aux_formula_bytes < plain_row.aux_formula_bytes);
  CHECK(bloom_row.aux_payload_bytes < plain_row.aux_payload_bytes);

  CHECK_THROWS_AS(
      run_experiment(ExperimentConfig{}, data),  // empty methods list
      std::invalid_argument);
}

TEST_CASE("sweep_privacy_ratios: endpoints forced, interior beta-matched") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {MethodSpec{.method = Method::only_public},
                 MethodSpec{.method = Method::naive}};

  auto points = sweep_privacy_ratios(cfg, data, {0.0, 0.5});
  REQUIRE(points.size() == 4);  // two ratios x two methods
  CHECK(points[0].target_ratio == 0.0);
  CHECK(points[0].method == "only_public");
  CHECK(points[1].method == "naive");
  CHECK(points[0].realized_ratio == 0.0);
  CHECK(points[1].rmse == points[0].rmse);  // ratio 0: same public model
  CHECK(points[2].target_ratio == 0.5);
  CHECK(points[2].realized_ratio > 0.3);
  CHECK(points[2].realized_ratio < 0.7);
  // With half the data private, hiding it costs accuracy and fine-tuning
  // recovers some of it.
  CHECK(points[2].rmse > points[0].rmse);
  CHECK(points[3].rmse < points[2].rmse);

  auto csv = sweep_csv(points);
  CHECK(csv.rfind("target_ratio,method,realized_ratio,rmse,ndcg\n", 0) == 0);
  CHECK(csv.find("\n0,only_public,") != std::string::npos);
  CHECK(csv.find("\n0.5,naive,") != std::string::npos);
}

TEST_CASE("ablate_clusters: K sweep with exact naive equivalence at K=n") {
  auto data = testsupport::synth_small();
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {MethodSpec{.method = Method::joint, .z = 50, .R = 2}};

  const std::vector<int> Ks = {3, data.n_items()};
  auto rows = ablate_clusters(cfg, data, Ks);
  REQUIRE(rows.size() == 3 * Ks.size());

  double naive_rmse = 0.0;
  uint64_t naive_bytes = 0;
  std::vector<uint64_t> cluster_bytes;
  for (size_t gi = 0; gi < Ks.size(); ++gi) {
    const auto& nai = rows[gi * 3];
    const auto& clu = rows[gi * 3 + 1];
    const auto& joi = rows[gi * 3 + 2];
    CHECK(nai.K == Ks[gi]);
    CHECK(nai.method == "naive");
    CHECK(clu.method == "cluster");
    CHECK(clu.K == Ks[gi]);
    CHECK(joi.method == "joint");
    CHECK(joi.K == Ks[gi]);
    if (gi == 0) {
      naive_rmse = nai.rmse;
      naive_bytes = nai.aux_formula_bytes;
    } else {
      CHECK(nai.rmse == naive_rmse);  // K does not touch the naive arm
      CHECK(nai.aux_formula_bytes == naive_bytes);
    }
    cluster_bytes.push_back(clu.aux_formula_bytes);
    CHECK(std::isfinite(joi.rmse));
  }
  CHECK(cluster_bytes[0] < cluster_bytes[1]);  // payload grows with K
  // Coarse clustering compresses; at K = n_items the membership table makes
  // the payload larger than just shipping the item factors.
  CHECK(cluster_bytes[0] < naive_bytes);
  CHECK(cluster_bytes[1] > naive_bytes);
  // Singleton clusters reproduce the naive arm exactly.
  CHECK(rows[4].rmse == naive_rmse);

  CHECK_THROWS_AS(ablate_clusters(cfg, data, {0}), std::invalid_argument);
  CHECK_THROWS_AS(ablate_clusters(cfg, data, {data.n_items() + 1}),
                  std::invalid_argument);

  auto csv = ablation_csv(rows);
  CHECK(csv.rfind("K,method,rmse,aux_formula_bytes\n", 0) == 0);
  CHECK(csv.find("\n3,naive,") != std::string::npos);
}

TEST_CASE("write_report_files: byte-reproducible artifacts") {
  auto data = testsupport::synth_small();
  const auto base =
      std::filesystem::temp_directory_path() / "sp2_test_reports";
  std::filesystem::remove_all(base);

  ExperimentConfig cfg = smoke_config();
  cfg.methods = {MethodSpec{.method = Method::only_public},
                 MethodSpec{.method = Method::naive}};
  cfg.out_dir = (base / "a").string();
  auto report = run_experiment(cfg, data);
  write_report_files(report);

  cfg.out_dir = (base / "b").string();
  auto report2 = run_experiment(cfg, data);
  write_report_files(report2);

  // report.csv and report.json carry no paths and reproduce byte for byte;
  // manifest.json echoes the config, so it differs exactly in `out`.
  for (const char* name : {"report.csv", "report.json"}) {
    CAPTURE(name);
    const auto a = slurp(base / "a" / name);
    CHECK(a == slurp(base / "b" / name));
    CHECK(!a.empty());
  }
  {
    auto ma = nlohmann::json::parse(slurp(base / "a" / "manifest.json"));
    auto mb = nlohmann::json::parse(slurp(base / "b" / "manifest.json"));
    CHECK(ma["config"]["out"] == (base / "a").string());
    CHECK(mb["config"]["out"] == (base / "b").string());
    ma["config"].erase("out");
    mb["config"].erase("out");
    CHECK(ma == mb);
  }
  CHECK(slurp(base / "a" / "report.csv") == report_csv(report));

  auto manifest = nlohmann::json::parse(slurp(base / "a" / "manifest.json"));
  CHECK(manifest.at("format_version").get<int>() == 1);
  CHECK(manifest.at("tool").get<std::string>() == "sp2");
  CHECK(manifest.at("fold_digests").size() == 2);
  CHECK(manifest.at("config").at("seed").get<uint64_t>() == cfg.seed);

  auto rj = nlohmann::json::parse(slurp(base / "a" / "report.json"));
  CHECK(rj.at("aggregates").size() == 2);
  CHECK(rj.at("rows").size() == 4);
  CHECK(!rj.contains("fold_errors"));  // only present when something failed
  CHECK(rj.at("dataset_mean").get<double>() ==
        doctest::Approx(data.mean_rating()));

  std::filesystem::remove_all(base);
}
