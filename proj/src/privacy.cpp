#include "sp2/privacy.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>

#include "json.hpp"
#include "sp2/ingest.hpp"
#include "sp2/rng.hpp"
#include "sp2/serialize.hpp"

namespace sp2 {

std::string to_string(Hypothesis h) { return h == Hypothesis::H1 ? "H1" : "H2"; }

Hypothesis hypothesis_from_string(const std::string& s) {
  if (s == "H1") return Hypothesis::H1;
  if (s == "H2") return Hypothesis::H2;
  throw std::invalid_argument("unknown hypothesis '" + s + "' (expected H1 or H2)");
}

void BetaConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("beta config: shapes must be positive (got alpha=" +
                                std::to_string(alpha) + ", beta=" +
                                std::to_string(beta) + ")");
}

BetaConfig BetaConfig::named(const std::string& label) {
  if (label == "balanced") return {2.0, 2.0, label};
  if (label == "extreme") return {0.5, 0.5, label};
  if (label == "pessimistic") return {5.0, 1.0, label};
  if (label == "optimistic") return {1.0, 5.0, label};
  throw std::invalid_argument("unknown beta config label '" + label + "'");
}

BetaConfig BetaConfig::custom(double alpha, double beta) {
  BetaConfig c{alpha, beta, "custom"};
  c.validate();
  return c;
}

size_t PrivacyPartition::private_count() const {
  size_t n = 0;
  for (const auto& v : private_per_user) n += v.size();
  return n;
}

double PrivacyPartition::realized_private_fraction(size_t source_size) const {
  return source_size == 0
             ? 0.0
             : static_cast<double>(private_count()) / static_cast<double>(source_size);
}

void PrivacyPartition::validate_against(const RatingsDataset& source) const {
  if (public_set.size() + private_count() != source.size())
    throw std::runtime_error("partition: public + private sizes do not sum to source");
  // Multiset equality via sorted triples.
  auto key = [](const Rating& r) { return std::tuple(r.user, r.item, r.value); };
  std::vector<Rating> merged = public_set.ratings();
  for (int32_t u = 0; u < static_cast<int32_t>(private_per_user.size()); ++u)
    for (const Rating& r : private_per_user[u]) {
      if (r.user != u)
        throw std::runtime_error("partition: private rating filed under wrong user");
      merged.push_back(r);
    }
  std::vector<Rating> src = source.ratings();
  auto lt = [&](const Rating& a, const Rating& b) { return key(a) < key(b); };
  std::sort(merged.begin(), merged.end(), lt);
  std::sort(src.begin(), src.end(), lt);
  if (merged != src)
    throw std::runtime_error("partition: public ∪ private is not the source set");
}

namespace {

double beta_draw(std::mt19937_64& eng, double alpha, double beta) {
  std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
  const double x = ga(eng), y = gb(eng);
  return (x + y) == 0.0 ? 0.5 : x / (x + y);
}

// Allocation over index groups: group g (a user's or an item's rating
// indices) gets ratio[g] of its members marked private, chosen by a partial
// Fisher-Yates on a per-group engine.
PrivacyPartition allocate_groups(const RatingsDataset& train, Hypothesis hyp,
                                 const BetaConfig* config, double forced_gamma,
                                 uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("allocate: empty training set");
  const bool by_user = hyp == Hypothesis::H1;
  const int32_t n_groups = by_user ? train.n_users() : train.n_items();
  const char* tag = by_user ? "h1.user" : "h2.item";

  std::vector<std::vector<int32_t>> group_indices(n_groups);
  for (size_t idx = 0; idx < train.size(); ++idx) {
    const Rating& r = train.ratings()[idx];
    group_indices[by_user ? r.user : r.item].push_back(static_cast<int32_t>(idx));
  }

  PrivacyPartition part;
  part.hypothesis = hyp;
  part.ratios.assign(n_groups, 0.0);
  part.private_per_user.assign(train.n_users(), {});
  std::vector<uint8_t> is_private(train.size(), 0);

  for (int32_t g = 0; g < n_groups; ++g) {
    auto eng = rng::engine(rng::derive(seed, tag, static_cast<uint64_t>(g)));
    // The ratio is drawn even for empty groups (vacuously applied) so that
    // the realized-ratio report covers the whole population.
    const double gamma = config ? beta_draw(eng, config->alpha, config->beta)
                                : forced_gamma;
    part.ratios[g] = gamma;
    auto& members = group_indices[g];
    if (members.empty()) continue;
    const auto n_priv = static_cast<size_t>(std::clamp<int64_t>(
        round_half_even(gamma * static_cast<double>(members.size())), 0,
        static_cast<int64_t>(members.size())));
    for (size_t j = 0; j < n_priv; ++j) {
      std::uniform_int_distribution<size_t> pick(j, members.size() - 1);
      std::swap(members[j], members[pick(eng)]);
      is_private[members[j]] = 1;
    }
  }

  std::vector<Rating> public_ratings;
  public_ratings.reserve(train.size());
  for (size_t idx = 0; idx < train.size(); ++idx) {
    const Rating& r = train.ratings()[idx];
    if (is_private[idx])
      part.private_per_user[r.user].push_back(r);
    else
      public_ratings.push_back(r);
  }
  part.public_set = train.with_ratings(std::move(public_ratings));
  part.validate_against(train);
  return part;
}

}  // namespace

std::vector<double> sample_beta(const BetaConfig& config, size_t n,
                                uint64_t seed) {
  config.validate();
  if (n < 1) throw std::invalid_argument("sample_beta: n must be >= 1");
  auto eng = rng::engine(rng::derive(seed, "beta"));
  std::vector<double> out(n);
  for (auto& x : out) x = beta_draw(eng, config.alpha, config.beta);
  return out;
}

PrivacyPartition allocate_h1(const RatingsDataset& train,
                             const BetaConfig& config, uint64_t seed) {
  config.validate();
  return allocate_groups(train, Hypothesis::H1, &config, 0.0, seed);
}

PrivacyPartition allocate_h2(const RatingsDataset& train,
                             const BetaConfig& config, uint64_t seed) {
  config.validate();
  return allocate_groups(train, Hypothesis::H2, &config, 0.0, seed);
}

PrivacyPartition allocate_h1_const(const RatingsDataset& train, double gamma,
                                   uint64_t seed) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("allocate: forced ratio must be in [0,1]");
  return allocate_groups(train, Hypothesis::H1, nullptr, gamma, seed);
}

PrivacyPartition allocate_h2_const(const RatingsDataset& train, double gamma,
                                   uint64_t seed) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("allocate: forced ratio must be in [0,1]");
  return allocate_groups(train, Hypothesis::H2, nullptr, gamma, seed);
}

void export_partition(const std::string& dir, const PrivacyPartition& partition,
                      const RatingsDataset& source, const BetaConfig& config,
                      uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "private");
  write_tsv((fs::path(dir) / "public.tsv").string(), partition.public_set);
  for (int32_t u = 0; u < static_cast<int32_t>(partition.private_per_user.size());
       ++u) {
    const auto& priv = partition.private_per_user[u];
    if (priv.empty()) continue;
    const std::string name = "user_" + source.user_ids().raw(u) + ".tsv";
    write_tsv((fs::path(dir) / "private" / name).string(),
              source.with_ratings(priv));
  }
  nlohmann::json j;
  j["hypothesis"] = to_string(partition.hypothesis);
  j["alpha"] = config.alpha;
  j["beta"] = config.beta;
  j["label"] = config.label;
  j["seed"] = seed;
  j["n_public"] = partition.public_set.size();
  j["n_private"] = partition.private_count();
  j["realized_private_fraction"] =
      partition.realized_private_fraction(source.size());
  write_file_text((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

}  // namespace sp2
