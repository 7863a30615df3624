#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "afa/env.hpp"
#include "afa/predictor.hpp"
#include "test_util.hpp"

using namespace afa;

namespace {

const DatasetBundle& cube_data() {
  static const DatasetBundle data = generate_cube(CubeSpec{}, 0);
  return data;
}

const SharedPredictor& cube_predictor() {
  static const SharedPredictor p = [] {
    TrainConfig cfg;
    cfg.max_epochs = 250;
    return pretrain_shared(cube_data(), {0.0, 0.9}, cfg, 1);
  }();
  return p;
}

}  // namespace

TEST_CASE("shared predictor approaches the bayes ceiling on fully observed cube") {
  // The exact Bayes accuracy of this generative model is ~0.86 with all 20
  // features observed; the trained net must land close to it.
  const double acc = full_observation_accuracy(cube_predictor().model, cube_data().val);

  std::size_t bayes_correct = 0;
  const std::vector<double> full(20, 1.0);
  for (std::size_t i = 0; i < cube_data().val.x.rows; ++i) {
    std::vector<double> values(cube_data().val.x.row(i), cube_data().val.x.row(i) + 20);
    const auto p = testutil::cube_bayes_posterior(CubeSpec{}, values, full);
    if (static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) ==
        cube_data().val.y[i])
      ++bayes_correct;
  }
  const double bayes_acc = static_cast<double>(bayes_correct) / 150.0;
  CHECK(acc >= bayes_acc - 0.10);
  CHECK(acc <= bayes_acc + 0.05);
  CHECK(acc > 0.70);
}

TEST_CASE("zero-feature prediction approximates the class prior") {
  MaskedInput m;
  m.values.assign(20, 0.0);
  m.mask.assign(20, 0.0);
  const auto probs = cube_predictor().model.predict(m);
  std::vector<double> prior(8, 0.0);
  for (const int y : cube_data().train.y) prior[static_cast<std::size_t>(y)] += 1.0 / 700.0;
  double tv = 0.0;
  for (std::size_t c = 0; c < 8; ++c) tv += 0.5 * std::abs(probs[c] - prior[c]);
  CHECK(tv < 0.05);
}

TEST_CASE("informative-features-only prediction tracks the bayes oracle") {
  const CubeSpec spec;
  std::size_t correct = 0, bayes_correct = 0, agree = 0;
  const TabularDataset& test = cube_data().test;
  for (std::size_t i = 0; i < test.x.rows; ++i) {
    const int k = test.y[i];
    std::vector<double> mask(20, 0.0);
    for (std::size_t off = 0; off < 3; ++off) mask[static_cast<std::size_t>(k) + off] = 1.0;
    const MaskedInput m = make_masked_input(test.x.row(i), mask);
    const auto probs = cube_predictor().model.predict(m);
    const auto bayes = testutil::cube_bayes_posterior(spec, m.values, mask);
    const int net_arg =
        static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    const int bayes_arg =
        static_cast<int>(std::max_element(bayes.begin(), bayes.end()) - bayes.begin());
    if (net_arg == k) ++correct;
    if (bayes_arg == k) ++bayes_correct;
    if (net_arg == bayes_arg) ++agree;
  }
  const double n = static_cast<double>(test.x.rows);
  // at least as accurate as the exact posterior restricted to these views,
  // and mostly in agreement with it
  CHECK(static_cast<double>(correct) / n >= static_cast<double>(bayes_correct) / n - 0.02);
  CHECK(static_cast<double>(correct) / n >= 0.75);
  CHECK(static_cast<double>(agree) / n >= 0.75);
}

TEST_CASE("predict is deterministic and returns a probability vector") {
  MaskedInput m;
  m.values.assign(20, 0.0);
  m.mask.assign(20, 0.0);
  m.values[3] = 0.7;
  m.mask[3] = 1.0;
  const auto a = cube_predictor().model.predict(m);
  const auto b = cube_predictor().model.predict(m);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  double sum = 0.0;
  for (const double v : a) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("single-class dataset is learned perfectly") {
  DatasetBundle b = testutil::copy_feature_dataset(64, 16, 16, 5);
  for (auto* ds : {&b.train, &b.val, &b.test})
    for (auto& y : ds->y) y = 0;
  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.class_weights = {1.0, 1.0};
  const SharedPredictor p = pretrain_shared(b, {0.0, 0.5}, cfg, 0);
  CHECK(full_observation_accuracy(p.model, b.test) == 1.0);
}

TEST_CASE("monotone information sanity on cube") {
  const double full = full_observation_accuracy(cube_predictor().model, cube_data().test);
  const Matrix none(cube_data().test.x.rows, 20, 0.0);
  const double empty = masked_accuracy(cube_predictor().model, cube_data().test, none);
  CHECK(full >= empty);
}

TEST_CASE("mc dropout certainty") {
  SUBCASE("one pass without dropout equals predict") {
    DatasetBundle b = testutil::copy_feature_dataset(64, 16, 16, 6);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    PretrainOptions opts;
    opts.dropout_rate = 0.0;
    const SharedPredictor p = pretrain_shared(b, {0.0, 0.5}, cfg, 0, opts);
    MaskedInput m;
    m.values = {1.0, 0.0};
    m.mask = {1.0, 0.0};
    Rng rng(0);
    const auto cert = p.model.certainty(m, 1, rng);
    const auto pred = p.model.predict(m);
    for (std::size_t i = 0; i < cert.size(); ++i) CHECK(cert[i] == pred[i]);
  }
  SUBCASE("certainty sums to one and variance shrinks with passes") {
    MaskedInput m;
    m.values.assign(20, 0.0);
    m.mask.assign(20, 0.0);
    m.values[5] = 0.4;
    m.mask[5] = 1.0;
    auto variance_at = [&](int passes, std::uint64_t base_seed) {
      std::vector<double> first;
      double var = 0.0;
      const int reps = 30;
      std::vector<double> vals(reps);
      for (int r = 0; r < reps; ++r) {
        Rng rng(base_seed + static_cast<std::uint64_t>(r));
        const auto cert = cube_predictor().model.certainty(m, passes, rng);
        double sum = 0.0;
        for (const double v : cert) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-6);
        vals[r] = cert[0];
      }
      double mean = 0.0;
      for (const double v : vals) mean += v / reps;
      for (const double v : vals) var += (v - mean) * (v - mean) / reps;
      return var;
    };
    const double v1 = variance_at(1, 100);
    const double v16 = variance_at(16, 900);
    CHECK(v16 < v1);
  }
}

TEST_CASE("predictor checkpoint round-trip is bit exact") {
  const std::string path = "test_pred_ckpt.json";
  save_predictor(cube_predictor(), path);
  const SharedPredictor loaded = load_predictor(path);
  std::remove(path.c_str());
  CHECK(loaded.weights_fingerprint() == cube_predictor().weights_fingerprint());
  MaskedInput m;
  m.values.assign(20, 0.0);
  m.mask.assign(20, 1.0);
  std::copy(cube_data().test.x.row(0), cube_data().test.x.row(0) + 20, m.values.begin());
  const auto a = cube_predictor().model.predict(m);
  const auto b = loaded.model.predict(m);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("masked input invariants are enforced") {
  MaskedInput m;
  m.values = {1.0, 0.0};
  m.mask = {0.0, 0.0};
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.values = {0.0, 0.0};
  CHECK_NOTHROW(m.validate());
}

// ---------------------------------------------------------------------------
// acquisition environment

TEST_CASE("reset produces empty states and validates the budget") {
  const auto& data = cube_data();
  AcquisitionEnv env(data.test.x, data.test.y, 5, cube_predictor().model,
                     RewardKind::sparse_terminal_loss);
  const auto states = env.reset({0, 1, 2});
  CHECK(states.size() == 3);
  for (const auto& s : states) {
    CHECK(s.step == 0);
    CHECK(s.observed.empty());
    for (const double v : s.mask) CHECK(v == 0.0);
  }
  const auto again = env.reset({0, 1, 2});
  for (std::size_t i = 0; i < states.size(); ++i) {
    CHECK(states[i].instance == again[i].instance);
    CHECK(states[i].mask == again[i].mask);
  }
  CHECK_THROWS_AS(
      AcquisitionEnv(data.test.x, data.test.y, 21, cube_predictor().model,
                     RewardKind::sparse_terminal_loss),
      std::invalid_argument);

  const auto batch = env.reset([&] {
    std::vector<std::size_t> idx(128);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }());
  CHECK(batch.size() == 128);
}

TEST_CASE("sparse terminal reward is zero before the final step") {
  const auto& data = cube_data();
  const int b = 4;
  AcquisitionEnv env(data.test.x, data.test.y, b, cube_predictor().model,
                     RewardKind::sparse_terminal_loss);
  AcquisitionState s = env.reset_one(0);
  for (int t = 0; t < b; ++t) {
    const Transition tr = env.step(s, t);
    if (t + 1 < b) {
      CHECK(tr.reward == 0.0);
      CHECK(!tr.done);
    } else {
      CHECK(tr.done);
      CHECK(tr.reward == env.neg_loss(s));
    }
  }
  CHECK_THROWS_AS(env.step(s, 10), std::logic_error);
}

TEST_CASE("dense reward is the per-step negative loss and is bounded above by zero") {
  const auto& data = cube_data();
  AcquisitionEnv env(data.test.x, data.test.y, 5, cube_predictor().model,
                     RewardKind::dense_neg_loss);
  AcquisitionState s = env.reset_one(3);
  double total = 0.0;
  for (int t = 0; t < 5; ++t) {
    const Transition tr = env.step(s, t);
    CHECK(tr.reward <= 0.0);
    CHECK(tr.reward == env.neg_loss(s));
    total += tr.reward;
  }
  CHECK(total < 0.0);
}

TEST_CASE("certainty delta is zero when predictions cannot change") {
  // zero-weight classifier: output is constant regardless of input
  Rng rng(0);
  MlpConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {4};
  cfg.output_dim = 3;
  Mlp mlp(cfg, rng);
  for (auto& l : mlp.layers()) {
    l.w.fill(0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  MaskedClassifier clf(std::move(mlp), 4, 3);

  Matrix x(2, 4, 0.5);
  std::vector<int> y = {0, 1};
  AcquisitionEnv env(x, y, 2, clf, RewardKind::certainty_delta);
  AcquisitionState s = env.reset_one(0);
  const Transition tr = env.step(s, 1);
  CHECK(tr.reward == doctest::Approx(0.0));
}

TEST_CASE("action mask tracks the observed set") {
  const auto& data = cube_data();
  AcquisitionEnv env(data.test.x, data.test.y, 3, cube_predictor().model,
                     RewardKind::sparse_terminal_loss);
  AcquisitionState s = env.reset_one(0);
  auto legal = action_mask(s);
  for (const auto v : legal) CHECK(v == 1);

  env.step(s, 7);
  legal = action_mask(s);
  CHECK(legal[7] == 0);
  CHECK_THROWS_AS(env.step(s, 7), std::invalid_argument);

  env.step(s, 2);
  // step b-1 reached: exactly d - b + 1 legal actions remain
  legal = action_mask(s);
  std::size_t count = 0;
  for (const auto v : legal) count += v;
  CHECK(count == 20 - 3 + 1);
}

TEST_CASE("undiscounted returns match the objective identities") {
  const auto& data = cube_data();
  const int b = 6;
  AcquisitionEnv sparse(data.test.x, data.test.y, b, cube_predictor().model,
                        RewardKind::sparse_terminal_loss);
  AcquisitionEnv dense(data.test.x, data.test.y, b, cube_predictor().model,
                       RewardKind::dense_neg_loss);
  Rng rng(17);
  for (std::size_t i = 0; i < 10; ++i) {
    AcquisitionState ss = sparse.reset_one(i);
    AcquisitionState sd = dense.reset_one(i);
    std::vector<int> actions;
    while (static_cast<int>(actions.size()) < b) {
      const int a = static_cast<int>(rng.uniform_index(20));
      if (std::find(actions.begin(), actions.end(), a) == actions.end()) actions.push_back(a);
    }
    double sparse_ret = 0.0, dense_ret = 0.0, dense_expected = 0.0;
    for (const int a : actions) {
      sparse_ret += sparse.step(ss, a).reward;
      dense_ret += dense.step(sd, a).reward;
      dense_expected += dense.neg_loss(sd);
    }
    CHECK(sparse_ret == doctest::Approx(sparse.neg_loss(ss)).epsilon(1e-12));
    CHECK(dense_ret == doctest::Approx(dense_expected).epsilon(1e-12));
  }
}

TEST_CASE("environment is deterministic given seeds") {
  const auto& data = cube_data();
  AcquisitionEnv a(data.test.x, data.test.y, 4, cube_predictor().model,
                   RewardKind::certainty_delta);
  a.set_certainty(5, 42);
  AcquisitionEnv b(data.test.x, data.test.y, 4, cube_predictor().model,
                   RewardKind::certainty_delta);
  b.set_certainty(5, 42);
  AcquisitionState sa = a.reset_one(2), sb = b.reset_one(2);
  for (const int act : {1, 5, 9, 13}) {
    CHECK(a.step(sa, act).reward == b.step(sb, act).reward);
  }
}

TEST_CASE("transcript jsonl round trip") {
  EpisodeTranscript t;
  t.instance = 12;
  t.label = 3;
  t.actions = {4, 1, 9};
  t.rewards = {0.0, 0.0, -0.25};
  const std::string line = transcript_to_jsonl(t);
  const EpisodeTranscript back = transcript_from_jsonl(line);
  CHECK(back.instance == t.instance);
  CHECK(back.label == t.label);
  CHECK(back.actions == t.actions);
  CHECK(back.rewards == t.rewards);
}
