#include "sp2/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "sp2/rng.hpp"

namespace sp2 {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

RatingsDataset load_table(const std::string& path, char sep, bool allow_header,
                          const std::optional<RatingScale>& scale_override) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open dataset: " + path);

  IdMap users, items;
  std::vector<Rating> ratings;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  std::string line;
  size_t line_no = 0;
  bool first_data_line = true;
  while (std::getline(f, line)) {
    ++line_no;
    const std::string trimmed = strip(line);
    if (trimmed.empty()) continue;
    auto fields = split(trimmed, sep);
    for (auto& fd : fields) fd = strip(fd);
    if (fields.size() < 3)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected at least 3 columns, got " +
                               std::to_string(fields.size()));
    double value = 0.0;
    if (!parse_double(fields[2], value)) {
      // A CSV header row is tolerated once, before any data.
      if (allow_header && first_data_line) continue;
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": cannot parse rating value '" + fields[2] + "'");
    }
    first_data_line = false;
    Rating r;
    r.user = users.intern(fields[0]);
    r.item = items.intern(fields[1]);
    r.value = value;
    ratings.push_back(r);
    lo = std::min(lo, value);
    hi = std::max(hi, value);
  }
  if (ratings.empty())
    throw std::runtime_error(path + ": no ratings found");

  RatingScale scale = scale_override.value_or(
      RatingScale{lo, hi > lo ? hi : lo + 1.0});
  RatingsDataset data(std::move(ratings), std::move(users), std::move(items),
                      scale);
  data.validate();
  return data;
}

}  // namespace

RatingsDataset load_tsv(const std::string& path, const ColumnSpec& spec) {
  return load_table(path, '\t', /*allow_header=*/false, spec.scale);
}

RatingsDataset load_csv(const std::string& path, ColumnSpec spec) {
  return load_table(path, ',', /*allow_header=*/true, spec.scale);
}

void write_tsv(const std::string& path, const RatingsDataset& data) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  char buf[64];
  for (const Rating& r : data.ratings()) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    f << data.user_ids().raw(r.user) << '\t' << data.item_ids().raw(r.item)
      << '\t' << buf << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<FoldSplit> kfold(const RatingsDataset& data, int n_folds,
                             uint64_t seed) {
  if (n_folds < 2) throw std::invalid_argument("kfold: n_folds must be >= 2");
  if (data.empty()) throw std::invalid_argument("kfold: empty dataset");
  const size_t n = data.size();
  if (static_cast<size_t>(n_folds) > n)
    throw std::invalid_argument("kfold: n_folds exceeds number of ratings");

  auto order = rng::epoch_order(rng::derive(seed, "kfold"), 0, n);
  std::vector<FoldSplit> folds;
  folds.reserve(n_folds);
  // Remainder spread over the first (n % n_folds) folds, one extra each.
  const size_t base = n / n_folds, extra = n % n_folds;
  size_t start = 0;
  for (int fi = 0; fi < n_folds; ++fi) {
    const size_t len = base + (static_cast<size_t>(fi) < extra ? 1 : 0);
    std::vector<uint8_t> in_test(n, 0);
    for (size_t j = start; j < start + len; ++j) in_test[order[j]] = 1;
    std::vector<Rating> train, test;
    train.reserve(n - len);
    test.reserve(len);
    for (size_t j = 0; j < n; ++j)
      (in_test[j] ? test : train).push_back(data.ratings()[j]);
    FoldSplit fs;
    fs.fold_index = fi;
    fs.train = data.with_ratings(std::move(train));
    fs.test = data.with_ratings(std::move(test));
    folds.push_back(std::move(fs));
    start += len;
  }
  return folds;
}

}  // namespace sp2
