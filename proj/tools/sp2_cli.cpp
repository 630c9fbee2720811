// sp2 command line: experiment runner, sweeps, ablations, data preparation.
//
// Subcommands
//   run              k-fold evaluation of the configured methods
//   ablate-clusters  cluster-count ablation (naive / cluster@K / joint@z=K)
//   privacy-sweep    RMSE and NDCG across target private-ratio grid
//   prepare-data     canonicalize a ratings table (+ optional partition export)
//   print-config     echo the effective configuration as canonical JSON
//
// Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sp2/experiment.hpp"
#include "sp2/ingest.hpp"
#include "sp2/privacy.hpp"
#include "sp2/serialize.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool clamp = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "JSON config file");
  sub->add_option("--seed", [&o](const CLI::results_t& r) {
        o.seed = std::stoull(r.at(0));
        return true;
      }, "Override the run seed")->type_name("UINT");
  sub->add_option("--out", [&o](const CLI::results_t& r) {
        o.out = r.at(0);
        return true;
      }, "Override the output directory")->type_name("DIR");
  sub->add_option("--threads", [&o](const CLI::results_t& r) {
        o.threads = std::stoi(r.at(0));
        return true;
      }, "Worker threads for fold evaluation")->type_name("INT");
  sub->add_flag("--clamp-predictions", o.clamp,
                "Clamp predictions to the rating scale before scoring");
}

sp2::ExperimentConfig effective_config(const CommonOpts& o) {
  sp2::ExperimentConfig cfg;
  if (!o.config_path.empty())
    cfg = sp2::config_from_json(sp2::read_file_text(o.config_path));
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.hp.seed = *o.seed;
  }
  if (o.out) cfg.out_dir = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  if (o.clamp) cfg.clamp_predictions = true;
  return cfg;
}

sp2::RatingsDataset load_dataset(const sp2::ExperimentConfig& cfg) {
  if (cfg.dataset_path.empty())
    throw std::invalid_argument("config: dataset.path is required");
  return cfg.format == sp2::TableFormat::tsv ? sp2::load_tsv(cfg.dataset_path)
                                             : sp2::load_csv(cfg.dataset_path);
}

int cmd_run(const CommonOpts& o) {
  sp2::ExperimentConfig cfg = effective_config(o);
  const sp2::RatingsDataset data = load_dataset(cfg);
  cfg.validate(data.n_items(), data.n_users());

  std::printf("[sp2] dataset: %zu ratings, %d users, %d items, scale [%g, %g]\n",
              data.size(), data.n_users(), data.n_items(), data.scale().min,
              data.scale().max);
  std::printf("[sp2] %d folds, hypothesis %s, beta %s(%.3g, %.3g), seed %llu\n",
              cfg.n_folds, sp2::to_string(cfg.hypothesis).c_str(),
              cfg.beta.label.c_str(), cfg.beta.alpha, cfg.beta.beta,
              static_cast<unsigned long long>(cfg.seed));

  const sp2::RunReport report = sp2::run_experiment(cfg, data);

  std::printf("%-4s %-28s %10s %10s %10s\n", "fold", "method", "rmse", "ndcg@10",
              "seconds");
  for (const auto& row : report.rows)
    std::printf("%-4d %-28s %10.4f %10.4f %10.2f\n", row.fold,
                row.method.c_str(), row.rmse, row.ndcg, row.seconds);
  std::printf("---- aggregates (mean +/- sample stddev over folds) ----\n");
  for (const auto& a : report.aggregates)
    std::printf("%-28s rmse %.4f +/- %.4f   ndcg@10 %.4f +/- %.4f\n",
                a.method.c_str(), a.rmse_mean, a.rmse_std, a.ndcg_mean,
                a.ndcg_std);
  for (size_t fi = 0; fi < report.fold_digests.size(); ++fi)
    std::printf("fold %zu: realized private fraction %.4f, digest %s\n", fi,
                report.realized_private_fraction[fi],
                report.fold_digests[fi].c_str());

  sp2::write_report_files(report);
  std::printf("[sp2] wrote %s/{report.csv,report.json,manifest.json}\n",
              cfg.out_dir.c_str());

  int rc = 0;
  for (size_t fi = 0; fi < report.fold_errors.size(); ++fi)
    if (!report.fold_errors[fi].empty()) {
      std::fprintf(stderr, "[sp2] fold %zu FAILED: %s\n", fi,
                   report.fold_errors[fi].c_str());
      rc = 1;
    }
  return rc;
}

int cmd_ablate(const CommonOpts& o, const std::vector<int>& Ks) {
  sp2::ExperimentConfig cfg = effective_config(o);
  const sp2::RatingsDataset data = load_dataset(cfg);
  cfg.validate(data.n_items(), data.n_users());
  const auto rows = sp2::ablate_clusters(cfg, data, Ks);
  const std::string csv = sp2::ablation_csv(rows);
  std::fputs(csv.c_str(), stdout);
  fs::create_directories(cfg.out_dir);
  sp2::write_file_text((fs::path(cfg.out_dir) / "ablation.csv").string(), csv);
  std::printf("[sp2] wrote %s/ablation.csv\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const CommonOpts& o, const std::vector<double>& grid) {
  sp2::ExperimentConfig cfg = effective_config(o);
  const sp2::RatingsDataset data = load_dataset(cfg);
  cfg.validate(data.n_items(), data.n_users());
  const auto points = sp2::sweep_privacy_ratios(cfg, data, grid);
  const std::string csv = sp2::sweep_csv(points);
  std::fputs(csv.c_str(), stdout);
  fs::create_directories(cfg.out_dir);
  sp2::write_file_text((fs::path(cfg.out_dir) / "sweep.csv").string(), csv);
  std::printf("[sp2] wrote %s/sweep.csv\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_prepare(const CommonOpts& o, const std::string& input,
                const std::string& format, bool export_part,
                const std::string& hypothesis, const std::string& beta_label) {
  sp2::ExperimentConfig cfg = effective_config(o);
  const bool csv = format == "csv" ||
                   (format == "auto" && fs::path(input).extension() == ".csv");
  const sp2::RatingsDataset data =
      csv ? sp2::load_csv(input) : sp2::load_tsv(input);

  fs::create_directories(cfg.out_dir);
  const std::string tsv_path = (fs::path(cfg.out_dir) / "ratings.tsv").string();
  sp2::write_tsv(tsv_path, data);

  nlohmann::json manifest;
  manifest["source"] = input;
  manifest["n_users"] = data.n_users();
  manifest["n_items"] = data.n_items();
  manifest["n_ratings"] = data.size();
  manifest["scale"] = {{"min", data.scale().min}, {"max", data.scale().max}};
  manifest["mean_rating"] = data.mean_rating();
  manifest["sha256"] = sp2::sha256_hex(sp2::read_file_bytes(tsv_path));
  sp2::write_file_text(
      (fs::path(cfg.out_dir) / "dataset_manifest.json").string(),
      manifest.dump(2) + "\n");
  std::printf("[sp2] wrote %s and dataset_manifest.json\n", tsv_path.c_str());

  if (export_part) {
    const sp2::Hypothesis h = sp2::hypothesis_from_string(hypothesis);
    const sp2::BetaConfig beta = sp2::BetaConfig::named(beta_label);
    const uint64_t seed = o.seed.value_or(cfg.seed);
    const sp2::PrivacyPartition part = h == sp2::Hypothesis::H1
                                           ? sp2::allocate_h1(data, beta, seed)
                                           : sp2::allocate_h2(data, beta, seed);
    const std::string pdir = (fs::path(cfg.out_dir) / "partition").string();
    sp2::export_partition(pdir, part, data, beta, seed);
    std::printf("[sp2] wrote partition under %s (private fraction %.4f)\n",
                pdir.c_str(), part.realized_private_fraction(data.size()));
  }
  return 0;
}

int cmd_print_config(const CommonOpts& o) {
  const sp2::ExperimentConfig cfg = effective_config(o);
  std::fputs(sp2::config_to_json(cfg).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sp2: selective privacy preserving collaborative filtering"};
  app.require_subcommand(1);

  CommonOpts opts;

  CLI::App* run = app.add_subcommand("run", "Run the configured experiment");
  add_common(run, opts);

  CLI::App* ablate =
      app.add_subcommand("ablate-clusters", "Cluster-count ablation");
  add_common(ablate, opts);
  std::vector<int> Ks = {25, 50, 100, 200};
  ablate->add_option("--K", Ks, "Cluster counts to ablate")->delimiter(',');

  CLI::App* sweep =
      app.add_subcommand("privacy-sweep", "Sweep target private ratios");
  add_common(sweep, opts);
  std::vector<double> grid = {0.0, 0.17, 0.5, 0.83};
  sweep->add_option("--grid", grid, "Target mean private ratios")
      ->delimiter(',');

  CLI::App* prepare =
      app.add_subcommand("prepare-data", "Canonicalize a ratings table");
  add_common(prepare, opts);
  std::string input, format = "auto", hypothesis = "H1",
              beta_label = "balanced";
  bool export_part = false;
  prepare->add_option("--input", input, "Source ratings table")->required();
  prepare->add_option("--format", format, "Input format: tsv, csv, or auto")
      ->check(CLI::IsMember({"tsv", "csv", "auto"}));
  prepare->add_flag("--export-partition", export_part,
                    "Also export a public/private partition");
  prepare->add_option("--hypothesis", hypothesis, "H1 (per user) or H2 (per item)")
      ->check(CLI::IsMember({"H1", "H2"}));
  prepare->add_option("--beta", beta_label,
                      "Beta preset: balanced, extreme, pessimistic, optimistic");

  CLI::App* print_cfg =
      app.add_subcommand("print-config", "Echo the effective configuration");
  add_common(print_cfg, opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(opts);
    if (ablate->parsed()) return cmd_ablate(opts, Ks);
    if (sweep->parsed()) return cmd_sweep(opts, grid);
    if (prepare->parsed())
      return cmd_prepare(opts, input, format, export_part, hypothesis,
                         beta_label);
    if (print_cfg->parsed()) return cmd_print_config(opts);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "[sp2] configuration error:\n%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[sp2] error: %s\n", e.what());
    return 1;
  }
  return 0;
}
