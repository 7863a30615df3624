#pragma once

#include <string>
#include <vector>

#include "afa/data.hpp"
#include "afa/nn.hpp"

namespace afa {

// Masked instance view: values are zeroed wherever mask is 0.
struct MaskedInput {
  std::vector<double> values;
  std::vector<double> mask;

  void validate() const;
};

// Anything that turns a masked input into class probabilities.
class ProbModel {
 public:
  virtual ~ProbModel() = default;
  virtual std::size_t n_features() const = 0;
  virtual int num_classes() const = 0;
  virtual std::vector<double> predict(const MaskedInput& m) const = 0;
  // Batched variant; default loops over rows.
  virtual Matrix predict_batch(const Matrix& values, const Matrix& mask) const;
  // MC-dropout averaged probabilities (Cert). Models without dropout fall
  // back to the deterministic prediction.
  virtual std::vector<double> certainty(const MaskedInput& m, int passes, Rng& rng) const;
};

// MLP classifier over the concatenation (masked values, mask).
class MaskedClassifier : public ProbModel {
 public:
  MaskedClassifier() = default;
  MaskedClassifier(Mlp mlp, std::size_t d, int num_classes);

  std::size_t n_features() const override { return d_; }
  int num_classes() const override { return num_classes_; }
  std::vector<double> predict(const MaskedInput& m) const override;
  Matrix predict_batch(const Matrix& values, const Matrix& mask) const override;
  std::vector<double> certainty(const MaskedInput& m, int passes, Rng& rng) const override;

  Matrix logits_batch(const Matrix& values, const Matrix& mask) const;

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  nlohmann::json to_json() const;
  static MaskedClassifier from_json(const nlohmann::json& j);

 private:
  Mlp mlp_;  // input dim 2d
  std::size_t d_ = 0;
  int num_classes_ = 0;
};

struct PretrainOptions {
  std::vector<std::size_t> hidden_dims = {128, 128};
  double dropout_rate = 0.1;
  double val_masking_prob = 0.0;  // 0.25 for the (Fashion)MNIST preset
  std::vector<int> restrict_features;  // non-empty: only these may be observed
};

struct SharedPredictor {
  MaskedClassifier model;
  nlohmann::json manifest;

  std::uint64_t weights_fingerprint() const { return mlp_fingerprint(model.mlp()); }
};

// Random-masking pretraining with early stopping on validation loss at the
// minimum masking level; restores the best checkpoint.
SharedPredictor pretrain_shared(const DatasetBundle& data, const MaskingDistribution& masking,
                                const TrainConfig& cfg, std::uint64_t seed,
                                const PretrainOptions& opts = {});

// Generic masked-classifier trainer reused by the builtin classifiers.
MaskedClassifier train_masked_classifier(const DatasetBundle& data,
                                         const MaskingDistribution& masking,
                                         const TrainConfig& cfg, std::uint64_t seed,
                                         const PretrainOptions& opts);

void save_predictor(const SharedPredictor& p, const std::string& path);
SharedPredictor load_predictor(const std::string& path);

double masked_accuracy(const ProbModel& model, const TabularDataset& ds, const Matrix& mask);
double full_observation_accuracy(const ProbModel& model, const TabularDataset& ds);

MaskedInput make_masked_input(const double* row, const std::vector<double>& mask);

}  // namespace afa
