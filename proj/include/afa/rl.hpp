#pragma once

#include <array>
#include <deque>

#include "afa/policy.hpp"
#include "afa/pvae.hpp"

namespace afa {

// Truncated lambda-return with gamma = 1. bootstrap[t] is the value estimate
// of the state reached after step t; the final entry should be 0 for episodic
// tasks.
std::vector<double> lambda_return(const std::vector<double>& rewards,
                                  const std::vector<double>& bootstrap, double lambda);

// Order-invariant encoder of the observed (index, value) set: per-element
// read MLP, attention-based recurrent processing, write MLP.
struct SetEncoderConfig {
  std::size_t d = 0;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> read_hidden = {32, 32};
  std::vector<std::size_t> write_hidden = {32, 32};
  int process_steps = 5;
  std::size_t out_dim = 32;
};

struct SetEncoderTape {
  std::vector<int> indices;
  Matrix elems;  // m x (d+1)
  MlpTape read_tape;
  Matrix e;  // m x embed
  std::vector<std::vector<double>> q;     // process_steps+1 entries
  std::vector<std::vector<double>> attn;  // per step, length m
  std::vector<std::vector<double>> r;     // per step, length embed
  MlpTape write_tape;
};

struct SetEncoderGrads {
  MlpGrads read;
  DenseLayer proc;
  MlpGrads write;
  void zero();
};

class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(const SetEncoderConfig& cfg, Rng& rng);

  const SetEncoderConfig& config() const { return cfg_; }

  std::vector<double> forward(const AcquisitionState& s) const;
  std::vector<double> forward(const AcquisitionState& s, SetEncoderTape& tape) const;
  void backward(const SetEncoderTape& tape, const std::vector<double>& dout,
                SetEncoderGrads& grads) const;

  SetEncoderGrads make_grads() const;
  std::vector<ParamRef> params();

  nlohmann::json to_json() const;
  static SetEncoder from_json(const nlohmann::json& j);

 private:
  SetEncoderConfig cfg_;
  Mlp read_;
  DenseLayer proc_;  // (2*embed) -> embed, tanh
  Mlp write_;
};

// Training-curve sample: iteration, mean return, validation accuracy.
using TrainCurve = std::vector<std::array<double, 3>>;

struct RlConfig {
  int n_agents = 128;           // parallel rollouts per iteration
  std::size_t batch_size = 512; // transitions per gradient step
  int n_batches = 10000;        // gradient steps
  double learning_rate = 1e-3;
  double eps_min = 0.05;
  double tau = 0.005;           // target soft update
  double lambda = 0.75;         // TD(lambda)
  int cert_passes = 10;
  std::size_t replay_capacity = 0;  // 0 -> method default
  int eval_every = 0;               // 0 -> n_batches / 20
  std::size_t pretrain_epochs = 100;
  MaskingDistribution masking = {0.0, 0.9};
};

// JAFA: sparse-terminal-reward DQN over the set encoding, jointly trained
// with a [32,32] classifier once epsilon has decayed.
struct JafaModel {
  SetEncoder encoder;
  DenseLayer q_head;  // out_dim -> d
  MaskedClassifier classifier;

  std::vector<double> q_values(const AcquisitionState& s) const;
  nlohmann::json to_json() const;
  static JafaModel from_json(const nlohmann::json& j);
};

JafaModel train_jafa(const DatasetBundle& data, int budget, const RlConfig& cfg,
                     std::uint64_t seed, TrainCurve* curve = nullptr);

// OL: certainty-delta DQN with a coupled PQ network; the P-network class
// probabilities are appended to the Q input.
struct OlModel {
  MaskedClassifier p_net;  // [64,32,16] with dropout (MC certainty)
  Mlp q_net;               // (2d + C) -> d

  std::vector<double> q_values(const AcquisitionState& s) const;
  nlohmann::json to_json() const;
  static OlModel from_json(const nlohmann::json& j);
};

OlModel train_ol(const DatasetBundle& data, int budget, const RlConfig& cfg,
                 std::uint64_t seed, TrainCurve* curve = nullptr);

// ODIN: PPO with dense negative-loss reward; model_based imputes revealed
// values from the PVAE instead of ground truth during training rollouts.
struct OdinModel {
  Mlp policy_net;  // 2d -> d logits (illegal actions masked)
  Mlp value_net;   // 2d -> 1

  std::vector<double> masked_logits(const AcquisitionState& s) const;
  int sample_action(const AcquisitionState& s, Rng& rng) const;
  nlohmann::json to_json() const;
  static OdinModel from_json(const nlohmann::json& j);
};

struct OdinConfig {
  RlConfig rl;
  double clip_ratio = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double gae_lambda = 0.95;
  std::vector<std::size_t> hidden_dims = {32, 32};
  bool model_based = false;
};

OdinModel train_odin(const DatasetBundle& data, int budget, const OdinConfig& cfg,
                     std::uint64_t seed, const ProbModel& reward_model,
                     const Pvae* pvae = nullptr, TrainCurve* curve = nullptr);

class JafaPolicy : public AcquisitionPolicy {
 public:
  explicit JafaPolicy(JafaModel model) : model_(std::move(model)) {}
  std::string id() const override { return "jafa"; }
  int select(const AcquisitionState& s, Rng&) override;
  const ProbModel* builtin() const override { return &model_.classifier; }
  const JafaModel& model() const { return model_; }

 private:
  JafaModel model_;
};

class OlPolicy : public AcquisitionPolicy {
 public:
  explicit OlPolicy(OlModel model) : model_(std::move(model)) {}
  std::string id() const override { return "ol"; }
  int select(const AcquisitionState& s, Rng&) override;
  const ProbModel* builtin() const override { return &model_.p_net; }
  const OlModel& model() const { return model_; }

 private:
  OlModel model_;
};

class OdinPolicy : public AcquisitionPolicy {
 public:
  OdinPolicy(OdinModel model, bool model_based)
      : model_(std::move(model)), model_based_(model_based) {}
  std::string id() const override { return model_based_ ? "odin_mbrl" : "odin_mfrl"; }
  int select(const AcquisitionState& s, Rng&) override;
  const OdinModel& model() const { return model_; }

 private:
  OdinModel model_;
  bool model_based_;
};

}  // namespace afa
