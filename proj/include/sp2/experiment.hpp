#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sp2/baselines.hpp"
#include "sp2/core.hpp"
#include "sp2/ingest.hpp"
#include "sp2/metrics.hpp"
#include "sp2/privacy.hpp"

namespace sp2 {

enum class Method {
  abs_optimistic,
  abs_pessimistic,
  only_public,
  naive,
  cluster,
  joint,
  dp,
  obf_fr,
  obf_sr,
  obf_sm,
};

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct MethodSpec {
  Method method = Method::naive;
  // cluster
  int K = 50;
  bool bloom = false;
  // joint
  int z = 50;
  int R = 3;
  // dp
  int beta_m = 15;
  double noise_sigma = 0.5;
  // obfuscation
  int n_peers = 10;
  int ratings_per_peer = 10;
  double max_fraction = 0.5;

  /// e.g. "cluster[K=50]", "joint[z=50,R=3]"; plain method name otherwise.
  std::string label() const;
};

struct ExperimentConfig {
  std::string dataset_path;
  TableFormat format = TableFormat::tsv;
  int n_folds = 5;
  uint64_t seed = 42;
  Hypothesis hypothesis = Hypothesis::H1;
  BetaConfig beta;
  std::vector<MethodSpec> methods;
  Hyperparams hp;
  std::string out_dir = "out";
  bool clamp_predictions = false;
  int threads = 1;
  /// When set, allocation ignores `beta` and marks a constant fraction of
  /// every group private (degenerate sweep endpoints).
  std::optional<double> forced_ratio;

  /// Collects every static violation; throws std::invalid_argument listing
  /// all of them. `n_items` < 0 skips dataset-dependent checks.
  void validate(int64_t n_items = -1, int64_t n_users = -1) const;
};

ExperimentConfig config_from_json(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& cfg);

struct FoldMethodResult {
  int fold = 0;
  std::string method;
  double rmse = 0.0;
  double ndcg = 0.0;
  uint64_t aux_formula_bytes = 0;
  uint64_t aux_payload_bytes = 0;
  double seconds = 0.0;  // console diagnostics only; never written to files
};

struct MethodAggregate {
  std::string method;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;  // sample stddev over folds
  double ndcg_mean = 0.0;
  double ndcg_std = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<FoldMethodResult> rows;           // fold-major, method order as configured
  std::vector<MethodAggregate> aggregates;
  std::vector<double> realized_private_fraction;  // per fold
  std::vector<std::string> fold_digests;          // privacy digest per fold
  std::vector<std::string> fold_errors;           // "" when the fold completed
  double dataset_mean = 0.0;
};

/// mean/sample-stddev helper shared by reports and tests.
std::pair<double, double> mean_stddev(std::span<const double> xs);

/// 5-fold (configurable) paired evaluation of every requested method.
/// Within a fold all methods share the same partition and the same training
/// seed; the privacy digest is asserted unchanged across the device phase.
RunReport run_experiment(const ExperimentConfig& cfg,
                         const RatingsDataset& data);

std::string report_csv(const RunReport& report);
std::string report_json(const RunReport& report);
std::string report_manifest(const RunReport& report);

/// Writes report.csv, report.json, manifest.json under cfg.out_dir.
void write_report_files(const RunReport& report);

struct SweepPoint {
  double target_ratio = 0.0;
  std::string method;
  double realized_ratio = 0.0;
  double rmse = 0.0;
  double ndcg = 0.0;
};

/// For each target mean ratio: a beta config with that mean (α=μc, β=(1−μ)c,
/// c=4); ratios 0 and 1 degenerate to forced constant allocations. Reuses
/// cfg.methods.
std::vector<SweepPoint> sweep_privacy_ratios(const ExperimentConfig& cfg,
                                             const RatingsDataset& data,
                                             const std::vector<double>& grid);

std::string sweep_csv(const std::vector<SweepPoint>& points);

struct AblationRow {
  int K = 0;
  std::string method;
  double rmse = 0.0;
  uint64_t aux_formula_bytes = 0;
};

/// Per K: naive (constant), cluster at K, joint at z=K (R from cfg methods or
/// 3). Emits plot-ready rows.
std::vector<AblationRow> ablate_clusters(const ExperimentConfig& cfg,
                                         const RatingsDataset& data,
                                         const std::vector<int>& K_values);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Runs fn(i) for i in [0, n) on `threads` workers (inline when <= 1).
/// Exceptions propagate; results must be written to pre-sized slots.
void parallel_for(int threads, int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace sp2
