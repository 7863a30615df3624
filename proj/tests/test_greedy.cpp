#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "afa/greedy.hpp"
#include "test_util.hpp"

using namespace afa;

namespace {

// standardized binary copy: x0 = ±1 encodes y, x1 independent noise
DatasetBundle pm_copy_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                              std::uint64_t seed) {
  DatasetBundle b;
  b.name = "pmcopy";
  b.seed = seed;
  b.num_classes = 2;
  b.n_features = 2;
  Rng rng(seed);
  auto fill = [&](TabularDataset& ds, std::size_t n, Split split) {
    ds.x = Matrix(n, 2);
    ds.y.assign(n, 0);
    ds.num_classes = 2;
    ds.split = split;
    ds.name = b.name;
    for (std::size_t i = 0; i < n; ++i) {
      const int y = rng.uniform() < 0.5 ? 0 : 1;
      ds.y[i] = y;
      ds.x(i, 0) = y == 1 ? 1.0 : -1.0;
      ds.x(i, 1) = rng.normal();
    }
  };
  fill(b.train, n_train, Split::train);
  fill(b.val, n_val, Split::val);
  fill(b.test, n_test, Split::test);
  return b;
}

}  // namespace

TEST_CASE("greedy_select picks the argmax with lowest-index tie break") {
  CHECK(greedy_select({{0.1, 0.9, 0.3}}) == 1);
  CHECK(greedy_select({{0.5, 0.5}}) == 0);
  CHECK(greedy_select({{kObservedSentinel, 0.2, 0.7}}) == 2);
  CHECK_THROWS_AS(greedy_select({{kObservedSentinel, kObservedSentinel}}), std::logic_error);
}

TEST_CASE("greedy_select is invariant under strictly increasing transforms") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    CmiScores s;
    s.scores.resize(6);
    for (auto& v : s.scores) v = rng.normal();
    if (trial % 3 == 0) s.scores[rng.uniform_index(6)] = kObservedSentinel;
    const int base = greedy_select(s);
    CmiScores t = s;
    for (auto& v : t.scores)
      if (v != kObservedSentinel) v = std::exp(2.0 * v) + 1.0;
    CHECK(greedy_select(t) == base);
  }
}

TEST_CASE("gdfs temperature stages use logarithmic spacing from 1.0 to 0.1") {
  const auto stages = gdfs_temperature_stages();
  REQUIRE(stages.size() == 5);
  const double expected[] = {1.0, 0.562, 0.316, 0.178, 0.1};
  for (int i = 0; i < 5; ++i) {
    CHECK(stages[i] == doctest::Approx(std::pow(10.0, -i / 4.0)).epsilon(1e-12));
    CHECK(stages[i] == doctest::Approx(expected[i]).epsilon(0.01));
  }
}

TEST_CASE("pvae learns a one-feature gaussian") {
  // x ~ N(0,1), single feature
  DatasetBundle b;
  b.name = "gauss1";
  b.num_classes = 2;
  b.n_features = 1;
  Rng rng(5);
  auto fill = [&](TabularDataset& ds, std::size_t n, Split split) {
    ds.x = Matrix(n, 1);
    ds.y.assign(n, 0);
    ds.num_classes = 2;
    ds.split = split;
    for (std::size_t i = 0; i < n; ++i) {
      ds.x(i, 0) = rng.normal();
      ds.y[i] = static_cast<int>(i % 2);
    }
  };
  fill(b.train, 1500, Split::train);
  fill(b.val, 300, Split::val);
  fill(b.test, 300, Split::test);

  TrainConfig cfg;
  cfg.max_epochs = 80;
  cfg.early_stop_patience = 15;
  PvaeConfig pcfg;
  pcfg.d = 1;
  pcfg.latent_dim = 4;
  pcfg.enc_hidden = {32, 32};
  pcfg.dec_hidden = {32, 32};
  pcfg.beta = 0.1;
  const PvaeTrainResult res = train_pvae(b, {0.0, 0.9}, cfg, 7, pcfg);

  // reconstruction under full observation recovers the instance
  double mse = 0.0, var = 0.0;
  Rng noise(11);
  for (std::size_t i = 0; i < 200; ++i) {
    MaskedInput m;
    m.values = {b.test.x(i, 0)};
    m.mask = {1.0};
    const GaussianParams g = res.model.posterior_sample(m, noise);
    mse += (g.mean[0] - b.test.x(i, 0)) * (g.mean[0] - b.test.x(i, 0)) / 200.0;
    var += b.test.x(i, 0) * b.test.x(i, 0) / 200.0;
  }
  CHECK(mse < 0.3 * var);

  // imputation from nothing matches the data moments
  double sum = 0.0, sq = 0.0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    MaskedInput m;
    m.values = {0.0};
    m.mask = {0.0};
    const double v = res.model.sample_feature(m, 0, noise);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sq / draws - mean * mean);
  CHECK(std::abs(mean) < 0.15);
  CHECK(sd == doctest::Approx(1.0).epsilon(0.25));
}

TEST_CASE("pvae validation elbo improves over training and beta=0 is pure reconstruction") {
  DatasetBundle b = pm_copy_dataset(400, 100, 100, 1);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 5;
  PvaeConfig pcfg;
  pcfg.d = 2;
  pcfg.latent_dim = 4;
  pcfg.enc_hidden = {16};
  pcfg.dec_hidden = {16};
  const PvaeTrainResult one_epoch = train_pvae(b, {0.0, 0.9}, cfg, 3, pcfg);
  cfg.max_epochs = 40;
  const PvaeTrainResult trained = train_pvae(b, {0.0, 0.9}, cfg, 3, pcfg);
  CHECK(trained.best_val_elbo >= one_epoch.best_val_elbo);

  pcfg.beta = 0.0;
  const PvaeTrainResult recon_only = train_pvae(b, {0.0, 0.9}, cfg, 3, pcfg);
  CHECK(std::isfinite(recon_only.best_val_elbo));
}

TEST_CASE("eddi cmi separates a perfect-copy feature from independent noise") {
  const DatasetBundle data = pm_copy_dataset(1200, 200, 200, 3);
  TrainConfig pcfg;
  pcfg.max_epochs = 300;
  pcfg.early_stop_patience = 300;
  PretrainOptions popts;
  popts.dropout_rate = 0.0;
  popts.hidden_dims = {64, 64};
  const SharedPredictor pred = pretrain_shared(data, {0.0, 0.9}, pcfg, 1, popts);

  TrainConfig vcfg;
  vcfg.max_epochs = 80;
  vcfg.early_stop_patience = 15;
  PvaeConfig pvae_cfg;
  pvae_cfg.d = 2;
  pvae_cfg.latent_dim = 8;
  pvae_cfg.enc_hidden = {64, 64};
  pvae_cfg.dec_hidden = {64, 64};
  const PvaeTrainResult pvae = train_pvae(data, {0.0, 0.9}, vcfg, 2, pvae_cfg);

  AcquisitionState s;
  s.values.assign(2, 0.0);
  s.mask.assign(2, 0.0);
  s.budget = 2;

  double copy_mean = 0.0, noise_mean = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const CmiScores sc = eddi_cmi(pvae.model, pred.model, s, 200, seed);
    CHECK(sc.scores[0] >= -0.01);  // KL averages cannot go negative
    CHECK(sc.scores[1] >= -0.01);
    copy_mean += sc.scores[0] / 5.0;
    noise_mean += sc.scores[1] / 5.0;
  }
  // smoke-scale bounds; the full ln2 calibration runs in the acceptance suite
  CHECK(copy_mean > 0.45);
  CHECK(copy_mean < std::log(2.0) + 0.05);
  CHECK(noise_mean < 0.05);
  CHECK(copy_mean > 5.0 * noise_mean);

  // observed features carry the sentinel
  AcquisitionState s2 = s;
  s2.values[0] = 1.0;
  s2.mask[0] = 1.0;
  s2.observed.push_back(0);
  s2.step = 1;
  const CmiScores sc2 = eddi_cmi(pvae.model, pred.model, s2, 50, 0);
  CHECK(sc2.scores[0] == kObservedSentinel);
  CHECK(sc2.scores[1] != kObservedSentinel);
}

TEST_CASE("gdfs learns to pick the single informative feature first") {
  const DatasetBundle data = testutil::single_informative_dataset(6, 800, 200, 200, 4);
  GreedyTrainConfig cfg;
  cfg.train.max_epochs = 20;
  cfg.pretrain_epochs = 30;
  cfg.stage_epochs = 6;
  cfg.stage_patience = 6;
  cfg.unroll_steps = 3;
  cfg.hidden_dims = {64, 64};
  const GdfsModel model = train_gdfs(data, cfg, 0);

  std::size_t first_is_informative = 0;
  for (std::size_t i = 0; i < data.val.x.rows; ++i) {
    AcquisitionState s;
    s.values.assign(6, 0.0);
    s.mask.assign(6, 0.0);
    s.budget = 3;
    s.instance = i;
    if (greedy_select(model.scores(s)) == 0) ++first_is_informative;
  }
  CHECK(static_cast<double>(first_is_informative) / static_cast<double>(data.val.x.rows) >=
        0.95);

  // scores at observed indices are the sentinel
  AcquisitionState s;
  s.values.assign(6, 0.0);
  s.mask.assign(6, 0.0);
  s.budget = 3;
  s.values[2] = 0.3;
  s.mask[2] = 1.0;
  s.observed.push_back(2);
  s.step = 1;
  CHECK(model.scores(s).scores[2] == kObservedSentinel);

  // round trip preserves behaviour
  const GdfsModel back = GdfsModel::from_json(model.to_json());
  AcquisitionState s0;
  s0.values.assign(6, 0.0);
  s0.mask.assign(6, 0.0);
  s0.budget = 3;
  CHECK(greedy_select(back.scores(s0)) == greedy_select(model.scores(s0)));
}

TEST_CASE("dime value net ranks a perfect-copy feature first and noise near zero") {
  const DatasetBundle data = testutil::single_informative_dataset(6, 3000, 300, 300, 9);
  GreedyTrainConfig cfg;
  cfg.train.max_epochs = 250;
  cfg.train.batch_size = 64;
  cfg.pretrain_epochs = 40;
  cfg.unroll_steps = 3;
  cfg.hidden_dims = {64, 64};
  const DimeModel model = train_dime(data, cfg, 0);

  AcquisitionState s;
  s.values.assign(6, 0.0);
  s.mask.assign(6, 0.0);
  s.budget = 3;
  const CmiScores sc = model.scores(s);
  CHECK(greedy_select(sc) == 0);
  for (std::size_t j = 1; j < 6; ++j) {
    CHECK(sc.scores[j] >= 0.0);  // bounded parameterization
    CHECK(sc.scores[j] < 0.02);  // noise features carry no predicted gain
  }
  CHECK(sc.scores[0] > 0.3);

  const DimeModel back = DimeModel::from_json(model.to_json());
  const CmiScores sc2 = back.scores(s);
  for (std::size_t j = 0; j < 6; ++j) CHECK(sc2.scores[j] == sc.scores[j]);
}
