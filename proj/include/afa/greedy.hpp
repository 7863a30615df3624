#pragma once

#include <limits>

#include "afa/policy.hpp"
#include "afa/pvae.hpp"

namespace afa {

// Estimated I(y; x_i | x_S) per feature; observed indices hold the -inf
// sentinel.
struct CmiScores {
  std::vector<double> scores;
};

constexpr double kObservedSentinel = -std::numeric_limits<double>::infinity();

// Argmax over unobserved entries, ties broken by lowest index.
int greedy_select(const CmiScores& scores);

// Monte Carlo information-gain estimate: sample latents from q(z|x_S), impute
// each candidate feature from the decoder and average the predictor KL
// between p(y|x_S, x_i) and p(y|x_S).
CmiScores eddi_cmi(const Pvae& pvae, const ProbModel& predictor, const AcquisitionState& state,
                   int mc_samples, std::uint64_t seed);

class EddiPolicy : public AcquisitionPolicy {
 public:
  EddiPolicy(Pvae pvae, const ProbModel* predictor, int mc_samples, std::uint64_t seed)
      : pvae_(std::move(pvae)), predictor_(predictor), mc_samples_(mc_samples), seed_(seed) {}
  std::string id() const override { return "eddi"; }
  int select(const AcquisitionState& s, Rng& rng) override;
  const Pvae& pvae() const { return pvae_; }

 private:
  Pvae pvae_;
  const ProbModel* predictor_;
  int mc_samples_;
  std::uint64_t seed_;
};

struct GreedyTrainConfig {
  TrainConfig train;                       // lr 1e-3, batch 128 presets
  MaskingDistribution masking = {0.0, 0.9};
  std::vector<std::size_t> hidden_dims = {128, 128};
  double dropout_rate = 0.3;
  std::size_t unroll_steps = 10;           // training-time selection horizon
  std::size_t stage_epochs = 250;          // GDFS: cap per temperature stage
  std::size_t stage_patience = 10;
  double initial_epsilon = 0.05;           // DIME exploration
  std::size_t pretrain_epochs = 100;
};

// GDFS: selector trained by differentiable one-step-ahead selection with
// relaxed one-hot sampling over five temperature stages (log spacing 1.0 to
// 0.1), jointly with its own predictor.
struct GdfsModel {
  Mlp selector;  // 2d -> d logits
  MaskedClassifier predictor;

  CmiScores scores(const AcquisitionState& s) const;
  nlohmann::json to_json() const;
  static GdfsModel from_json(const nlohmann::json& j);
};

GdfsModel train_gdfs(const DatasetBundle& data, const GreedyTrainConfig& cfg,
                     std::uint64_t seed);

std::vector<double> gdfs_temperature_stages();

// DIME: value network regressing the observed cross-entropy reduction of
// adding each feature, non-negative outputs via softplus, trained jointly
// with its predictor under epsilon-greedy feature selection.
struct DimeModel {
  Mlp value_net;  // 2d -> d (raw; softplus applied)
  MaskedClassifier predictor;

  CmiScores scores(const AcquisitionState& s) const;
  nlohmann::json to_json() const;
  static DimeModel from_json(const nlohmann::json& j);
};

DimeModel train_dime(const DatasetBundle& data, const GreedyTrainConfig& cfg,
                     std::uint64_t seed);

class GdfsPolicy : public AcquisitionPolicy {
 public:
  explicit GdfsPolicy(GdfsModel model) : model_(std::move(model)) {}
  std::string id() const override { return "gdfs"; }
  int select(const AcquisitionState& s, Rng&) override {
    return greedy_select(model_.scores(s));
  }
  const ProbModel* builtin() const override { return &model_.predictor; }
  const GdfsModel& model() const { return model_; }

 private:
  GdfsModel model_;
};

class DimePolicy : public AcquisitionPolicy {
 public:
  explicit DimePolicy(DimeModel model) : model_(std::move(model)) {}
  std::string id() const override { return "dime"; }
  int select(const AcquisitionState& s, Rng&) override {
    return greedy_select(model_.scores(s));
  }
  const ProbModel* builtin() const override { return &model_.predictor; }
  const DimeModel& model() const { return model_; }

 private:
  DimeModel model_;
};

}  // namespace afa
