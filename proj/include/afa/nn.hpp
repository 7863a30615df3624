#pragma once

#include <string>
#include <vector>

#include "afa/matrix.hpp"
#include "json.hpp"

namespace afa {

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  double dropout_rate = 0.0;  // inverted dropout on hidden activations

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 250;
  std::size_t early_stop_patience = 10;
  std::vector<double> class_weights;  // empty -> derive from training labels
};

struct DenseLayer {
  Matrix w;                // fan_in x fan_out
  std::vector<double> b;   // fan_out
};

// Gradients mirror the layer structure.
struct MlpGrads {
  std::vector<DenseLayer> layers;
  void zero();
};

// Forward tape for backprop: layer inputs, pre-dropout ReLU outputs and
// dropout scale masks.
struct MlpTape {
  std::vector<Matrix> inputs;     // input to each dense layer
  std::vector<Matrix> relu_out;   // hidden layers only
  std::vector<Matrix> drop_mask;  // hidden layers only; empty when unused
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpConfig& cfg, Rng& rng);

  const MlpConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // train_mode enables dropout; rng is required when dropout is active.
  Matrix forward(const Matrix& x, bool train_mode = false, Rng* rng = nullptr) const;
  Matrix forward(const Matrix& x, MlpTape& tape, bool train_mode = false,
                 Rng* rng = nullptr) const;

  // Accumulates parameter gradients into grads; returns dLoss/dInput.
  Matrix backward(const MlpTape& tape, const Matrix& grad_out, MlpGrads& grads) const;

  MlpGrads make_grads() const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  MlpConfig cfg_;
  std::vector<DenseLayer> layers_;
};

struct ParamRef {
  double* p = nullptr;
  std::size_t n = 0;
};

std::vector<ParamRef> param_refs(std::vector<DenseLayer>& layers);
std::vector<ParamRef> param_refs(Mlp& mlp);
std::vector<ParamRef> param_refs(MlpGrads& grads);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Row-wise stable softmax.
Matrix softmax(const Matrix& logits);

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

// Mean over the batch of -w_y * log softmax(logits)_y.
LossGrad weighted_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                const std::vector<double>& weights);

// -log p[label], probabilities clamped away from zero.
double nll(const std::vector<double>& probs, int label, double weight = 1.0);

// Inverse class frequency on the training labels, normalized to mean 1.
std::vector<double> class_weights_from_labels(const std::vector<int>& labels,
                                              int num_classes);

void save_mlp(const Mlp& mlp, const std::string& path);
Mlp load_mlp(const std::string& path);

std::uint64_t mlp_fingerprint(const Mlp& mlp);

}  // namespace afa
