#include "afa/env.hpp"

#include <cmath>

#include "json.hpp"

namespace afa {

std::vector<std::uint8_t> action_mask(const AcquisitionState& s) {
  std::vector<std::uint8_t> legal(s.mask.size());
  for (std::size_t i = 0; i < s.mask.size(); ++i) legal[i] = s.mask[i] == 0.0 ? 1 : 0;
  return legal;
}

AcquisitionEnv::AcquisitionEnv(const Matrix& x, const std::vector<int>& y, int budget,
                               const ProbModel& model, RewardKind kind)
    : x_(&x), y_(&y), budget_(budget), model_(&model), kind_(kind) {
  if (budget < 1 || static_cast<std::size_t>(budget) > x.cols)
    throw std::invalid_argument("AcquisitionEnv: budget must be in [1, d]");
  if (x.rows != y.size()) throw std::invalid_argument("AcquisitionEnv: rows/labels mismatch");
}

AcquisitionState AcquisitionEnv::reset_one(std::size_t instance) const {
  if (instance >= x_->rows) throw std::invalid_argument("reset: instance out of range");
  AcquisitionState s;
  s.values.assign(x_->cols, 0.0);
  s.mask.assign(x_->cols, 0.0);
  s.budget = budget_;
  s.instance = instance;
  return s;
}

std::vector<AcquisitionState> AcquisitionEnv::reset(
    const std::vector<std::size_t>& instances) const {
  std::vector<AcquisitionState> out;
  out.reserve(instances.size());
  for (auto i : instances) out.push_back(reset_one(i));
  return out;
}

double AcquisitionEnv::neg_loss(const AcquisitionState& s) const {
  const auto probs = model_->predict(s.masked_input());
  const int y = (*y_)[s.instance];
  const double w = loss_weights_.empty() ? 1.0 : loss_weights_[static_cast<std::size_t>(y)];
  return -nll(probs, y, w);
}

std::vector<double> AcquisitionEnv::cert(const AcquisitionState& s) const {
  // Deterministic given (instance, step, certainty seed).
  Rng rng = Rng(certainty_seed_).fork(s.instance * 1000003ull + static_cast<std::uint64_t>(s.step));
  return model_->certainty(s.masked_input(), certainty_passes_, rng);
}

Transition AcquisitionEnv::step(AcquisitionState& s, int action) const {
  if (s.done()) throw std::logic_error("step: episode already done");
  if (action < 0 || static_cast<std::size_t>(action) >= s.mask.size())
    throw std::invalid_argument("step: action out of range");
  if (s.is_observed(action)) throw std::invalid_argument("step: repeated action");

  std::vector<double> cert_before;
  if (kind_ == RewardKind::certainty_delta) cert_before = cert(s);

  const double value = value_source_ ? value_source_(s, action)
                                     : (*x_)(s.instance, static_cast<std::size_t>(action));
  s.values[static_cast<std::size_t>(action)] = value;
  s.mask[static_cast<std::size_t>(action)] = 1.0;
  s.observed.push_back(action);
  s.step += 1;

  Transition t;
  t.action = action;
  t.done = s.done();
  switch (kind_) {
    case RewardKind::sparse_terminal_loss:
      t.reward = t.done ? neg_loss(s) : 0.0;
      break;
    case RewardKind::dense_neg_loss:
      t.reward = neg_loss(s);
      break;
    case RewardKind::certainty_delta: {
      const auto after = cert(s);
      double sq = 0.0;
      for (std::size_t j = 0; j < after.size(); ++j) {
        const double dd = after[j] - cert_before[j];
        sq += dd * dd;
      }
      t.reward = std::sqrt(sq);
      break;
    }
  }
  return t;
}

std::string transcript_to_jsonl(const EpisodeTranscript& t) {
  nlohmann::json j;
  j["instance"] = t.instance;
  j["label"] = t.label;
  j["actions"] = t.actions;
  j["rewards"] = t.rewards;
  return j.dump();
}

EpisodeTranscript transcript_from_jsonl(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  EpisodeTranscript t;
  t.instance = j.at("instance").get<std::size_t>();
  t.label = j.at("label").get<int>();
  t.actions = j.at("actions").get<std::vector<int>>();
  t.rewards = j.at("rewards").get<std::vector<double>>();
  return t;
}

}  // namespace afa
