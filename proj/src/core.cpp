#include "sp2/core.hpp"

#include <cmath>

namespace sp2 {

RatingsDataset RatingsDataset::from_triples(std::vector<Rating> ratings,
                                            int32_t n_users, int32_t n_items,
                                            RatingScale scale) {
  RatingsDataset d(std::move(ratings), IdMap::identity(n_users),
                   IdMap::identity(n_items), scale);
  d.validate();
  return d;
}

double RatingsDataset::mean_rating() const {
  if (ratings_.empty())
    throw std::runtime_error("mean_rating: empty dataset");
  double s = 0.0;
  for (const Rating& r : ratings_) s += r.value;
  return s / static_cast<double>(ratings_.size());
}

void RatingsDataset::validate() const {
  if (scale_.min >= scale_.max)
    throw std::runtime_error("dataset: rating scale min must be < max");
  const int32_t nu = n_users(), ni = n_items();
  for (size_t idx = 0; idx < ratings_.size(); ++idx) {
    const Rating& r = ratings_[idx];
    if (r.user < 0 || r.user >= nu)
      throw std::runtime_error("dataset: rating " + std::to_string(idx) +
                               " has user id " + std::to_string(r.user) +
                               " outside [0, " + std::to_string(nu) + ")");
    if (r.item < 0 || r.item >= ni)
      throw std::runtime_error("dataset: rating " + std::to_string(idx) +
                               " has item id " + std::to_string(r.item) +
                               " outside [0, " + std::to_string(ni) + ")");
    if (!(r.value >= scale_.min && r.value <= scale_.max))
      throw std::runtime_error("dataset: rating " + std::to_string(idx) +
                               " value " + std::to_string(r.value) +
                               " outside scale [" + std::to_string(scale_.min) +
                               ", " + std::to_string(scale_.max) + "]");
  }
}

void PublicModel::validate() const {
  const auto nu = static_cast<size_t>(n_users());
  const auto ni = static_cast<size_t>(n_items());
  if (user_bias.size() != nu || user_seen.size() != nu)
    throw std::runtime_error("model: user bias/seen arrays do not match n_users");
  if (item_bias.size() != ni || item_seen.size() != ni)
    throw std::runtime_error("model: item bias/seen arrays do not match n_items");
  if (user_vec.cols() != item_vec.cols())
    throw std::runtime_error("model: user and item factor dimensions differ");
  if (!std::isfinite(mu))
    throw std::runtime_error("model: non-finite global mean");
}

double l2_loss(const PublicModel& model, const RatingsDataset& data,
               double lambda) {
  double loss = 0.0;
  for (const Rating& r : data.ratings()) {
    const auto p_u = model.user_vec.row(r.user);
    const auto q_i = model.item_vec.row(r.item);
    const double e =
        r.value - predict(model.mu, model.user_bias[r.user],
                          model.item_bias[r.item], p_u, q_i);
    double reg = model.user_bias[r.user] * model.user_bias[r.user] +
                 model.item_bias[r.item] * model.item_bias[r.item];
    for (double v : p_u) reg += v * v;
    for (double v : q_i) reg += v * v;
    loss += e * e + lambda * reg;
  }
  return loss;
}

int64_t round_half_even(double x) {
  const double fl = std::floor(x);
  const double frac = x - fl;
  auto lo = static_cast<int64_t>(fl);
  if (frac > 0.5) return lo + 1;
  if (frac < 0.5) return lo;
  return (lo % 2 == 0) ? lo : lo + 1;
}

}  // namespace sp2
