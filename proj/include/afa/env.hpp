#pragma once

#include <functional>
#include <vector>

#include "afa/predictor.hpp"

namespace afa {

struct AcquisitionState {
  std::vector<int> observed;     // acquisition order
  std::vector<double> values;    // zeros at unobserved indices
  std::vector<double> mask;      // 1 = observed
  int step = 0;
  int budget = 0;
  std::size_t instance = 0;

  bool done() const { return step >= budget; }
  bool is_observed(int i) const { return mask[static_cast<std::size_t>(i)] != 0.0; }
  std::size_t n_features() const { return mask.size(); }
  MaskedInput masked_input() const { return {values, mask}; }
};

enum class RewardKind { sparse_terminal_loss, dense_neg_loss, certainty_delta };

struct Transition {
  int action = -1;
  double reward = 0.0;
  bool done = false;
};

std::vector<std::uint8_t> action_mask(const AcquisitionState& s);

// Batched hard-budget acquisition MDP over rows of a dataset. Every episode
// runs for exactly `budget` steps; there is no stop action. Revealed values
// come from the bound rows unless a value_source overrides them (model-based
// rollouts).
class AcquisitionEnv {
 public:
  using ValueSource = std::function<double(const AcquisitionState&, int action)>;

  AcquisitionEnv(const Matrix& x, const std::vector<int>& y, int budget,
                 const ProbModel& model, RewardKind kind);

  void set_value_source(ValueSource src) { value_source_ = std::move(src); }
  void set_loss_weights(std::vector<double> w) { loss_weights_ = std::move(w); }
  void set_certainty(int passes, std::uint64_t seed) {
    certainty_passes_ = passes;
    certainty_seed_ = seed;
  }

  int budget() const { return budget_; }
  std::size_t n_features() const { return x_->cols; }
  int label(const AcquisitionState& s) const { return (*y_)[s.instance]; }

  std::vector<AcquisitionState> reset(const std::vector<std::size_t>& instances) const;
  AcquisitionState reset_one(std::size_t instance) const;

  // Advances the state in place and returns the transition record.
  Transition step(AcquisitionState& s, int action) const;

  // -loss of the model prediction at the given state.
  double neg_loss(const AcquisitionState& s) const;

 private:
  std::vector<double> cert(const AcquisitionState& s) const;

  const Matrix* x_;
  const std::vector<int>* y_;
  int budget_;
  const ProbModel* model_;
  RewardKind kind_;
  ValueSource value_source_;
  std::vector<double> loss_weights_;  // empty -> unit weights
  int certainty_passes_ = 10;
  std::uint64_t certainty_seed_ = 0;
};

struct EpisodeTranscript {
  std::size_t instance = 0;
  int label = 0;
  std::vector<int> actions;
  std::vector<double> rewards;
};

std::string transcript_to_jsonl(const EpisodeTranscript& t);
EpisodeTranscript transcript_from_jsonl(const std::string& line);

}  // namespace afa
