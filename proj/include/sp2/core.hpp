#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sp2 {

/// One observed rating, ids already densified.
struct Rating {
  int32_t user = 0;
  int32_t item = 0;
  double value = 0.0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

struct RatingScale {
  double min = 1.0;
  double max = 5.0;

  double midpoint() const { return 0.5 * (min + max); }
  double clamp(double v) const { return v < min ? min : (v > max ? max : v); }
  friend bool operator==(const RatingScale&, const RatingScale&) = default;
};

// Bidirectional raw-id <-> dense-id map. Raw ids are kept as strings so that
// integer (MovieLens) and string (Amazon ASIN) keys are handled uniformly.
class IdMap {
 public:
  int32_t intern(const std::string& raw) {
    auto it = index_.find(raw);
    if (it != index_.end()) return it->second;
    int32_t id = static_cast<int32_t>(raw_.size());
    index_.emplace(raw, id);
    raw_.push_back(raw);
    return id;
  }
  int32_t lookup(const std::string& raw) const {
    auto it = index_.find(raw);
    return it == index_.end() ? -1 : it->second;
  }
  const std::string& raw(int32_t dense) const { return raw_.at(dense); }
  int32_t size() const { return static_cast<int32_t>(raw_.size()); }

  /// Identity map over [0, n): raw id is the decimal string of the dense id.
  static IdMap identity(int32_t n) {
    IdMap m;
    for (int32_t i = 0; i < n; ++i) m.intern(std::to_string(i));
    return m;
  }

  friend bool operator==(const IdMap& a, const IdMap& b) {
    return a.raw_ == b.raw_;
  }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, int32_t> index_;
};

/// The observed ratings set with its id space and rating scale.
class RatingsDataset {
 public:
  RatingsDataset() = default;
  RatingsDataset(std::vector<Rating> ratings, IdMap users, IdMap items,
                 RatingScale scale)
      : ratings_(std::move(ratings)),
        users_(std::move(users)),
        items_(std::move(items)),
        scale_(scale) {}

  /// Dataset over pre-densified triples with identity id maps.
  static RatingsDataset from_triples(std::vector<Rating> ratings,
                                     int32_t n_users, int32_t n_items,
                                     RatingScale scale);

  const std::vector<Rating>& ratings() const { return ratings_; }
  size_t size() const { return ratings_.size(); }
  bool empty() const { return ratings_.empty(); }
  int32_t n_users() const { return users_.size(); }
  int32_t n_items() const { return items_.size(); }
  const RatingScale& scale() const { return scale_; }
  const IdMap& user_ids() const { return users_; }
  const IdMap& item_ids() const { return items_; }

  double mean_rating() const;

  /// Same id space and scale, different rating subset.
  RatingsDataset with_ratings(std::vector<Rating> ratings) const {
    return RatingsDataset(std::move(ratings), users_, items_, scale_);
  }

  /// Checks the declared invariants; throws std::runtime_error on violation.
  void validate() const;

  friend bool operator==(const RatingsDataset& a, const RatingsDataset& b) {
    return a.ratings_ == b.ratings_ && a.users_ == b.users_ &&
           a.items_ == b.items_ && a.scale_ == b.scale_;
  }

 private:
  std::vector<Rating> ratings_;
  IdMap users_;
  IdMap items_;
  RatingScale scale_;
};

struct Hyperparams {
  int k = 100;             // latent dimension
  double delta = 0.005;    // learning rate
  double lambda = 0.02;    // regularization
  int epochs = 20;
  uint64_t seed = 42;
  double init_std = 0.1;   // stddev of factor initialization

  void validate() const {
    if (k < 1) throw std::invalid_argument("hyperparams: k must be >= 1");
    if (delta <= 0) throw std::invalid_argument("hyperparams: delta must be > 0");
    if (lambda < 0) throw std::invalid_argument("hyperparams: lambda must be >= 0");
    if (epochs < 0) throw std::invalid_argument("hyperparams: epochs must be >= 0");
    if (init_std < 0) throw std::invalid_argument("hyperparams: init_std must be >= 0");
  }
};

// Row-major dense matrix of doubles; rows are factor vectors.
class Mat {
 public:
  Mat() = default;
  Mat(int32_t rows, int32_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

  int32_t rows() const { return rows_; }
  int32_t cols() const { return cols_; }
  std::span<double> row(int32_t r) {
    return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
  }
  std::span<const double> row(int32_t r) const {
    return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
  }
  double& at(int32_t r, int32_t c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int32_t r, int32_t c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  int32_t rows_ = 0;
  int32_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: factor dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  double s = 0.0;
  for (size_t f = 0; f < a.size(); ++f) s += a[f] * b[f];
  return s;
}

/// r_hat = mu + b_u + b_i + q_i . p_u. Not clamped to the rating scale.
inline double predict(double mu, double b_u, double b_i,
                      std::span<const double> p_u,
                      std::span<const double> q_i) {
  return mu + b_u + b_i + dot(q_i, p_u);
}

/// The global model trained on shared ratings: mean, biases, latent factors.
/// user_seen/item_seen mark ids with at least one rating in the training set
/// this model was fit on; scoring falls back to mu + available biases for
/// unseen ids (their factors are untrained initialization noise).
struct PublicModel {
  double mu = 0.0;
  std::vector<double> user_bias;
  std::vector<double> item_bias;
  Mat user_vec;  // n_users x k
  Mat item_vec;  // n_items x k
  std::vector<uint8_t> user_seen;
  std::vector<uint8_t> item_seen;

  int32_t k() const { return user_vec.cols(); }
  int32_t n_users() const { return user_vec.rows(); }
  int32_t n_items() const { return item_vec.rows(); }

  double score(int32_t u, int32_t i) const {
    double s = mu;
    const bool us = user_seen[u], is = item_seen[i];
    if (us) s += user_bias[u];
    if (is) s += item_bias[i];
    if (us && is) s += dot(item_vec.row(i), user_vec.row(u));
    return s;
  }

  void validate() const;

  friend bool operator==(const PublicModel&, const PublicModel&) = default;
};

enum class AuxVariant : uint8_t { naive = 0, cluster = 1, joint = 2 };

// Device-local overlay of whichever shared parameters fine-tuning mutates:
// item factors keyed by item id (naive/joint) or centroids keyed by cluster
// id (cluster). Entries exist only for parameters the device touched; reads
// fall through to the broadcast aux data.
struct LocalShared {
  AuxVariant variant = AuxVariant::naive;
  std::unordered_map<int32_t, double> bias;
  std::unordered_map<int32_t, std::vector<double>> vec;
};

/// Per-device fine-tuned user factor plus the device-local parameter copies.
/// Lives and dies on the device: no server interface accepts this type and
/// no serializer exists for it.
struct PrivateModel {
  int32_t user = -1;
  double user_bias_star = 0.0;
  std::vector<double> user_vec_star;
  LocalShared local_shared;
  bool fine_tuned = false;  // saw >= 1 private rating

  int32_t k() const { return static_cast<int32_t>(user_vec_star.size()); }
};

/// Regularized squared error of the biased-MF objective over a dataset; the
/// regularizer is accumulated once per observed rating.
double l2_loss(const PublicModel& model, const RatingsDataset& data,
               double lambda);

/// round-half-to-even of x, as a nonnegative count.
int64_t round_half_even(double x);

}  // namespace sp2
