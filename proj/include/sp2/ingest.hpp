#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sp2/core.hpp"

namespace sp2 {

struct FoldSplit {
  int fold_index = 0;
  RatingsDataset train;
  RatingsDataset test;
};

enum class TableFormat { tsv, csv };

struct ColumnSpec {
  TableFormat format = TableFormat::tsv;
  // Scale override; inferred as (min, max) observed when absent.
  std::optional<RatingScale> scale;
};

/// user<TAB>item<TAB>rating[<TAB>timestamp]; timestamp ignored. Dense ids
/// assigned in first-appearance order.
RatingsDataset load_tsv(const std::string& path, const ColumnSpec& spec = {});

/// user,item,rating[,timestamp] with optional header row.
RatingsDataset load_csv(const std::string& path, ColumnSpec spec = {});

/// Canonical TSV writer (raw ids, '%.17g' ratings); load_tsv round-trips it.
void write_tsv(const std::string& path, const RatingsDataset& data);

/// Seeded uniform shuffle then contiguous chunking into n_folds test slices.
std::vector<FoldSplit> kfold(const RatingsDataset& data, int n_folds,
                             uint64_t seed);

}  // namespace sp2
