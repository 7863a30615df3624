#include "afa/aaco.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace afa {

void KnnIndex::validate() const {
  if (!x_train || !y_train) throw std::invalid_argument("KnnIndex: training data not bound");
  if (x_train->rows == 0) throw std::invalid_argument("KnnIndex: empty training set");
  if (x_train->rows != y_train->size())
    throw std::invalid_argument("KnnIndex: rows/labels mismatch");
  if (k < 1 || k > x_train->rows) throw std::invalid_argument("KnnIndex: k out of range");
}

std::vector<std::size_t> knn_neighbors(const KnnIndex& knn, const AcquisitionState& state) {
  knn.validate();
  const Matrix& x = *knn.x_train;
  std::vector<std::size_t> obs;
  for (std::size_t j = 0; j < state.mask.size(); ++j)
    if (state.mask[j] != 0.0) obs.push_back(j);

  std::vector<std::pair<double, std::size_t>> dist(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double sq = 0.0;
    for (const std::size_t j : obs) {
      const double dd = state.values[j] - x(i, j);
      sq += dd * dd;
    }
    if (!obs.empty()) sq /= static_cast<double>(obs.size());
    dist[i] = {sq, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(knn.k), dist.end());
  std::vector<std::size_t> out(knn.k);
  for (std::size_t i = 0; i < knn.k; ++i) out[i] = dist[i].second;
  return out;
}

double aaco_objective(const AcquisitionState& state, const std::vector<int>& o_prime,
                      const KnnIndex& knn, const ProbModel& model, double alpha) {
  for (const int i : o_prime)
    if (state.is_observed(i)) throw std::invalid_argument("aaco_objective: subset not legal");

  const std::vector<std::size_t> neighbors = knn_neighbors(knn, state);
  const std::size_t d = state.n_features();
  Matrix values(neighbors.size(), d), mask(neighbors.size(), d);
  for (std::size_t ni = 0; ni < neighbors.size(); ++ni) {
    double* vr = values.row(ni);
    double* mr = mask.row(ni);
    std::copy(state.values.begin(), state.values.end(), vr);
    std::copy(state.mask.begin(), state.mask.end(), mr);
    for (const int i : o_prime) {
      const auto j = static_cast<std::size_t>(i);
      vr[j] = (*knn.x_train)(neighbors[ni], j);
      mr[j] = 1.0;
    }
  }
  const Matrix probs = model.predict_batch(values, mask);
  double loss = 0.0;
  for (std::size_t ni = 0; ni < neighbors.size(); ++ni) {
    const int y = (*knn.y_train)[neighbors[ni]];
    loss += -std::log(std::max(probs(ni, static_cast<std::size_t>(y)), 1e-12));
  }
  loss /= static_cast<double>(neighbors.size());
  return loss + alpha * static_cast<double>(o_prime.size());
}

namespace {

std::vector<int> unobserved_indices(const AcquisitionState& s) {
  std::vector<int> u;
  for (std::size_t j = 0; j < s.mask.size(); ++j)
    if (s.mask[j] == 0.0) u.push_back(static_cast<int>(j));
  return u;
}

void enumerate_subsets(const std::vector<int>& pool, std::size_t max_size,
                       std::vector<std::vector<int>>& out) {
  std::vector<int> cur;
  // iterative bitmask enumeration keeps the order deterministic
  const std::size_t n = pool.size();
  if (n > 24) throw std::invalid_argument("enumerate_subsets: pool too large for exhaustion");
  for (std::uint64_t bits = 1; bits < (1ull << n); ++bits) {
    if (static_cast<std::size_t>(__builtin_popcountll(bits)) > max_size) continue;
    cur.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (bits & (1ull << j)) cur.push_back(pool[j]);
    out.push_back(cur);
  }
}

}  // namespace

int aaco_select(const AcquisitionState& state, const KnnIndex& knn, const ProbModel& model,
                const AacoOptions& opts, Rng& rng) {
  const std::vector<int> pool = unobserved_indices(state);
  if (pool.empty()) throw std::logic_error("aaco_select: no unobserved feature");
  const auto remaining = static_cast<std::size_t>(state.budget - state.step);
  if (remaining == 0) throw std::logic_error("aaco_select: budget exhausted");

  std::vector<std::vector<int>> candidates;
  if (opts.exhaustive) {
    enumerate_subsets(pool, remaining, candidates);
  } else {
    if (state.n_features() <= opts.singleton_limit)
      for (const int i : pool) candidates.push_back({i});
    std::vector<int> scratch = pool;
    for (int s = 0; s < opts.n_samples; ++s) {
      const std::size_t size =
          1 + rng.uniform_index(std::min(remaining, pool.size()));
      // partial Fisher-Yates draw of `size` distinct indices
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t j = i + rng.uniform_index(scratch.size() - i);
        std::swap(scratch[i], scratch[j]);
      }
      std::vector<int> cand(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(size));
      std::sort(cand.begin(), cand.end());
      candidates.push_back(std::move(cand));
    }
  }

  std::size_t best = 0;
  double best_value = aaco_objective(state, candidates[0], knn, model, opts.alpha);
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double v = aaco_objective(state, candidates[c], knn, model, opts.alpha);
    if (v < best_value) {
      best_value = v;
      best = c;
    }
  }

  const std::vector<int>& subset = candidates[best];
  if (subset.size() == 1) return subset[0];
  // one-at-a-time tie-break: the member with the lowest one-step loss
  int pick = subset[0];
  double pick_value = aaco_objective(state, {subset[0]}, knn, model, 0.0);
  for (std::size_t i = 1; i < subset.size(); ++i) {
    const double v = aaco_objective(state, {subset[i]}, knn, model, 0.0);
    if (v < pick_value) {
      pick_value = v;
      pick = subset[i];
    }
  }
  return pick;
}

}  // namespace afa
