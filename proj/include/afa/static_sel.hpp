#pragma once

#include "afa/policy.hpp"

namespace afa {

struct FeatureRanking {
  std::vector<int> order;            // most to least important
  std::vector<double> importance;    // aligned with feature index
  std::string method = "pts";

  nlohmann::json to_json() const;
  static FeatureRanking from_json(const nlohmann::json& j);
};

// Permutation-test importance: validation accuracy drop when a feature column
// is replaced by resamples from the training column.
FeatureRanking permutation_importance(const ProbModel& model, const DatasetBundle& data,
                                      std::uint64_t seed, int repeats = 5);

struct StaticSelection {
  std::vector<int> selected;  // unordered, size b_max
  bool collapse_warning = false;

  nlohmann::json to_json() const;
  static StaticSelection from_json(const nlohmann::json& j);
};

struct CaeConfig {
  TrainConfig train;
  std::vector<std::size_t> hidden_dims = {128, 128};
  double temp_start = 10.0;
  double temp_end = 0.1;
};

// Concrete-selector global feature selection with b_max heads and a
// geometric temperature schedule.
StaticSelection train_cae(const DatasetBundle& data, std::size_t b_max, const CaeConfig& cfg,
                          std::uint64_t seed);

// Masked classifier whose observed sets are always subsets of `selected`;
// retrained per budget for CAE-S builtin evaluation.
MaskedClassifier train_subset_predictor(const DatasetBundle& data,
                                        const std::vector<int>& selected,
                                        const TrainConfig& cfg, std::uint64_t seed);

// PT-S: top-b by importance in rank order. CAE-S: random permutation of a
// random b-subset of the selected set.
std::vector<int> static_eval_order(const std::string& method, const FeatureRanking* ranking,
                                   const StaticSelection* selection, int b, Rng& rng);

class StaticOrderPolicy : public AcquisitionPolicy {
 public:
  // PT-S flavour: fixed order for every instance.
  StaticOrderPolicy(std::string method, FeatureRanking ranking, int budget);
  // CAE-S flavour: per-instance random order over the selected set.
  StaticOrderPolicy(std::string method, StaticSelection selection, int budget,
                    std::uint64_t seed);

  std::string id() const override { return method_; }
  void begin_instance(std::size_t instance, Rng& rng) override;
  int select(const AcquisitionState& s, Rng& rng) override;
  const ProbModel* builtin() const override { return subset_predictor_; }
  void set_builtin(const ProbModel* p) { subset_predictor_ = p; }

  const FeatureRanking& ranking() const { return ranking_; }
  const StaticSelection& selection() const { return selection_; }

 private:
  std::string method_;
  FeatureRanking ranking_;
  StaticSelection selection_;
  int budget_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<int> current_order_;
  const ProbModel* subset_predictor_ = nullptr;
};

}  // namespace afa
