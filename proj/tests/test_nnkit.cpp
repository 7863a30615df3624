#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "afa/nn.hpp"
#include "test_util.hpp"

using namespace afa;

TEST_CASE("matrix multiplication and transpose") {
  Matrix a(2, 3);
  a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
  a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
  Matrix b(3, 2);
  b(0, 0) = 7; b(0, 1) = 8;
  b(1, 0) = 9; b(1, 1) = 10;
  b(2, 0) = 11; b(2, 1) = 12;

  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == doctest::Approx(58));
  CHECK(c(1, 1) == doctest::Approx(154));

  const Matrix at_b = matmul_at_b(transpose(a), b);
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(at_b.data[i] == doctest::Approx(c.data[i]));
  const Matrix a_bt = matmul_a_bt(a, transpose(b));
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(a_bt.data[i] == doctest::Approx(c.data[i]));

  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("rng streams are deterministic and fork independently") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42);
  Rng f1 = c.fork(1), f2 = c.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());

  Rng n(7);
  double mean = 0.0, var = 0.0;
  const int N = 20000;
  std::vector<double> xs(N);
  for (auto& x : xs) x = n.normal();
  for (const double x : xs) mean += x / N;
  for (const double x : xs) var += (x - mean) * (x - mean) / N;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("zero-weight mlp maps any input to zero logits") {
  Rng rng(0);
  MlpConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {8};
  cfg.output_dim = 3;
  Mlp mlp(cfg, rng);
  for (auto& l : mlp.layers()) {
    l.w.fill(0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  Matrix x(2, 4);
  for (auto& v : x.data) v = rng.normal();
  const Matrix out = mlp.forward(x);
  for (const double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("identity single linear layer reproduces its input") {
  Rng rng(0);
  MlpConfig cfg;
  cfg.input_dim = 5;
  cfg.output_dim = 5;
  Mlp mlp(cfg, rng);
  mlp.layers()[0].w.fill(0.0);
  for (std::size_t i = 0; i < 5; ++i) mlp.layers()[0].w(i, i) = 1.0;
  std::fill(mlp.layers()[0].b.begin(), mlp.layers()[0].b.end(), 0.0);

  Matrix x(3, 5);
  for (auto& v : x.data) v = rng.normal();
  const Matrix out = mlp.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("backprop matches central finite differences on random small mlps") {
  Rng rng(123);
  for (int trial = 0; trial < 8; ++trial) {
    MlpConfig cfg;
    cfg.input_dim = 1 + rng.uniform_index(6);
    const std::size_t n_hidden = rng.uniform_index(3);  // up to 3 dense layers total
    for (std::size_t h = 0; h < n_hidden; ++h)
      cfg.hidden_dims.push_back(1 + rng.uniform_index(16));
    cfg.output_dim = 2 + rng.uniform_index(4);
    Mlp mlp(cfg, rng);

    const std::size_t n = 3;
    Matrix x(n, cfg.input_dim);
    for (auto& v : x.data) v = rng.normal();
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng.uniform_index(cfg.output_dim));
    std::vector<double> weights(cfg.output_dim);
    for (auto& w : weights) w = 0.5 + rng.uniform();

    auto loss_fn = [&]() {
      return weighted_cross_entropy(mlp.forward(x), labels, weights).loss;
    };

    MlpTape tape;
    const Matrix logits = mlp.forward(x, tape);
    LossGrad lg = weighted_cross_entropy(logits, labels, weights);
    MlpGrads grads = mlp.make_grads();
    const Matrix dx = mlp.backward(tape, lg.dlogits, grads);

    for (std::size_t li = 0; li < mlp.layers().size(); ++li) {
      auto& layer = mlp.layers()[li];
      const auto fd_w =
          testutil::finite_difference(loss_fn, layer.w.data.data(), layer.w.data.size());
      CHECK(testutil::max_relative_error(fd_w, grads.layers[li].w.data) < 1e-4);
      const auto fd_b = testutil::finite_difference(loss_fn, layer.b.data(), layer.b.size());
      CHECK(testutil::max_relative_error(fd_b, grads.layers[li].b) < 1e-4);
    }
    const auto fd_x = testutil::finite_difference(loss_fn, x.data.data(), x.data.size());
    CHECK(testutil::max_relative_error(fd_x, dx.data) < 1e-4);
  }
}

TEST_CASE("weighted cross entropy matches hand-computed values") {
  SUBCASE("uniform logits over 8 classes, unit weights") {
    Matrix logits(1, 8, 0.0);
    const std::vector<double> w(8, 1.0);
    const LossGrad lg = weighted_cross_entropy(logits, {3}, w);
    CHECK(lg.loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }
  SUBCASE("loss vanishes as the correct-class margin grows") {
    const std::vector<double> w(2, 1.0);
    double prev = 1e9;
    for (const double margin : {2.0, 5.0, 10.0, 20.0}) {
      Matrix logits(1, 2, 0.0);
      logits(0, 0) = margin;
      const double loss = weighted_cross_entropy(logits, {0}, w).loss;
      CHECK(loss < prev);
      prev = loss;
    }
    CHECK(prev < 1e-8);
  }
  SUBCASE("class weights scale the per-class loss") {
    Matrix logits(1, 2, 0.0);
    const LossGrad lg = weighted_cross_entropy(logits, {0}, {2.0, 1.0});
    CHECK(lg.loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("empty batch is an error") {
    Matrix logits(0, 2);
    CHECK_THROWS_AS(weighted_cross_entropy(logits, {}, {1.0, 1.0}), std::invalid_argument);
  }
  SUBCASE("loss is non-negative on random logits") {
    Rng rng(5);
    const std::vector<double> w(4, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      Matrix logits(2, 4);
      for (auto& v : logits.data) v = rng.normal(0, 3);
      std::vector<int> labels = {static_cast<int>(rng.uniform_index(4)),
                                 static_cast<int>(rng.uniform_index(4))};
      CHECK(weighted_cross_entropy(logits, labels, w).loss >= 0.0);
    }
  }
}

TEST_CASE("adam update") {
  SUBCASE("zero gradients leave parameters unchanged") {
    std::vector<double> p = {1.0, -2.0, 3.0};
    std::vector<double> g = {0.0, 0.0, 0.0};
    Adam opt(0.01);
    opt.step({{p.data(), p.size()}}, {{g.data(), g.size()}});
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
    CHECK(p[2] == 3.0);
  }
  SUBCASE("constant gradient moves parameters against its sign") {
    std::vector<double> p = {0.0};
    std::vector<double> g = {0.5};
    Adam opt(0.01);
    for (int i = 0; i < 100; ++i) opt.step({{p.data(), 1}}, {{g.data(), 1}});
    CHECK(p[0] < 0.0);
    g[0] = -0.5;
    std::vector<double> q = {0.0};
    Adam opt2(0.01);
    for (int i = 0; i < 100; ++i) opt2.step({{q.data(), 1}}, {{g.data(), 1}});
    CHECK(q[0] > 0.0);
  }
  SUBCASE("first-step magnitude is bias-corrected lr") {
    // fresh state, grad g: update = lr * g / (|g| + eps)
    const double lr = 0.003, g0 = 0.37;
    std::vector<double> p = {1.0};
    std::vector<double> g = {g0};
    Adam opt(lr);
    opt.step({{p.data(), 1}}, {{g.data(), 1}});
    const double expected = 1.0 - lr * g0 / (std::abs(g0) + 1e-8);
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("forward without dropout is deterministic; dropout only in train mode") {
  Rng rng(9);
  MlpConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {16, 16};
  cfg.output_dim = 4;
  cfg.dropout_rate = 0.5;
  Mlp mlp(cfg, rng);
  Matrix x(4, 6);
  for (auto& v : x.data) v = rng.normal();

  const Matrix a = mlp.forward(x);
  const Matrix b = mlp.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);

  Rng d1(3), d2(4);
  const Matrix t1 = mlp.forward(x, true, &d1);
  const Matrix t2 = mlp.forward(x, true, &d2);
  double diff = 0.0;
  for (std::size_t i = 0; i < t1.size(); ++i) diff += std::abs(t1.data[i] - t2.data[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("checkpoint round-trip preserves predictions bit-for-bit") {
  Rng rng(11);
  MlpConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden_dims = {12};
  cfg.output_dim = 5;
  Mlp mlp(cfg, rng);

  const std::string path = "test_mlp_ckpt.json";
  save_mlp(mlp, path);
  const Mlp loaded = load_mlp(path);
  std::remove(path.c_str());

  Matrix x(3, 7);
  for (auto& v : x.data) v = rng.normal();
  const Matrix a = mlp.forward(x);
  const Matrix b = loaded.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
  CHECK(mlp_fingerprint(mlp) == mlp_fingerprint(loaded));
}

TEST_CASE("class weights are inverse frequency normalized to mean one") {
  const std::vector<int> labels = {0, 0, 0, 1};
  const auto w = class_weights_from_labels(labels, 2);
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(1.5));
  CHECK((w[0] + w[1]) / 2.0 == doctest::Approx(1.0));
  for (const double v : w) CHECK(v > 0.0);
}
