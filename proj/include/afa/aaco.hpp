#pragma once

#include "afa/policy.hpp"

namespace afa {

// kNN approximation of the acquisition-conditioned oracle. Distances are
// masked Euclidean over the observed coordinates, normalized by the number of
// shared observed coordinates.
struct KnnIndex {
  const Matrix* x_train = nullptr;
  const std::vector<int>* y_train = nullptr;
  std::size_t k = 15;

  void validate() const;
};

// Neighbor row indices under the masked distance, ties broken by row index.
std::vector<std::size_t> knn_neighbors(const KnnIndex& knn, const AcquisitionState& state);

// E[loss after acquiring o_prime] approximated over the k nearest neighbors
// (impute from the neighbor, score against the neighbor's label), plus
// alpha * |o_prime|.
double aaco_objective(const AcquisitionState& state, const std::vector<int>& o_prime,
                      const KnnIndex& knn, const ProbModel& model, double alpha);

struct AacoOptions {
  double alpha = 0.0;
  int n_samples = 1000;      // sampled candidate subsets
  bool exhaustive = false;   // enumerate every nonempty subset within budget
  std::size_t singleton_limit = 64;  // always include singletons up to this d
};

int aaco_select(const AcquisitionState& state, const KnnIndex& knn, const ProbModel& model,
                const AacoOptions& opts, Rng& rng);

class AacoPolicy : public AcquisitionPolicy {
 public:
  AacoPolicy(KnnIndex knn, const ProbModel* model, AacoOptions opts, std::uint64_t seed)
      : knn_(knn), model_(model), opts_(opts), seed_(seed) {}
  std::string id() const override { return "aaco"; }
  int select(const AcquisitionState& s, Rng&) override {
    Rng rng = Rng(seed_).fork(s.instance * 1000003ull + static_cast<std::uint64_t>(s.step));
    return aaco_select(s, knn_, *model_, opts_, rng);
  }

 private:
  KnnIndex knn_;
  const ProbModel* model_;
  AacoOptions opts_;
  std::uint64_t seed_;
};

}  // namespace afa
