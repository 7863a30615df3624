#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "afa/data.hpp"
#include "test_util.hpp"

using namespace afa;

TEST_CASE("cube matches the published shapes and is reproducible") {
  const DatasetBundle a = generate_cube(CubeSpec{}, 0);
  CHECK(a.train.x.rows == 700);
  CHECK(a.val.x.rows == 150);
  CHECK(a.test.x.rows == 150);
  CHECK(a.train.x.cols == 20);
  CHECK(a.num_classes == 8);
  for (const int y : a.train.y) CHECK((y >= 0 && y < 8));

  const DatasetBundle b = generate_cube(CubeSpec{}, 0);
  CHECK(a.data_fingerprint() == b.data_fingerprint());
  const DatasetBundle c = generate_cube(CubeSpec{}, 1);
  CHECK(a.data_fingerprint() != c.data_fingerprint());
}

TEST_CASE("cube with zero sigma pins informative features to their class bits") {
  CubeSpec spec;
  spec.informative_sigma = 0.0;
  spec.n_train = 64;
  spec.n_val = 8;
  spec.n_test = 8;
  const DatasetBundle b = generate_cube(spec, 3);
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    const int k = b.train.y[i];
    for (std::size_t off = 0; off < 3; ++off) {
      const double v = b.train.x(i, static_cast<std::size_t>(k) + off);
      CHECK(v == doctest::Approx(spec.informative_mean(k, off)));
    }
  }
}

TEST_CASE("cube empirical feature means concentrate on the class bits") {
  CubeSpec spec;
  spec.n_train = 10000;
  spec.n_val = 8;
  spec.n_test = 8;
  const DatasetBundle b = generate_cube(spec, 7);
  // feature k for class k carries bit 0 of k
  for (const int k : {0, 1, 4, 7}) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < b.train.x.rows; ++i) {
      if (b.train.y[i] != k) continue;
      sum += b.train.x(i, static_cast<std::size_t>(k));
      ++count;
    }
    REQUIRE(count > 500);
    const double mean = sum / static_cast<double>(count);
    const double bound = 3.0 * 0.3 / std::sqrt(static_cast<double>(count));
    CHECK(std::abs(mean - static_cast<double>(k & 1)) < bound);
  }
}

TEST_CASE("cube bayes oracle beats noise-only observation") {
  // A Bayes classifier over the true class's informative features must beat
  // one over three noise features (which carry nothing).
  CubeSpec spec;
  spec.n_train = 2000;
  spec.n_val = 8;
  spec.n_test = 8;
  const DatasetBundle b = generate_cube(spec, 11);
  std::size_t correct_informative = 0, correct_noise = 0;
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    const int k = b.train.y[i];
    std::vector<double> mask(spec.n_features, 0.0), values(spec.n_features, 0.0);
    for (std::size_t off = 0; off < 3; ++off) {
      mask[static_cast<std::size_t>(k) + off] = 1.0;
      values[static_cast<std::size_t>(k) + off] = b.train.x(i, static_cast<std::size_t>(k) + off);
    }
    auto p = testutil::cube_bayes_posterior(spec, values, mask);
    if (static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == k)
      ++correct_informative;

    std::vector<double> mask2(spec.n_features, 0.0), values2(spec.n_features, 0.0);
    // three fixed far-away positions are noise for class k whenever k+2 < 12
    for (const std::size_t j : {12u, 15u, 18u}) {
      mask2[j] = 1.0;
      values2[j] = b.train.x(i, j);
    }
    auto p2 = testutil::cube_bayes_posterior(spec, values2, mask2);
    if (static_cast<int>(std::max_element(p2.begin(), p2.end()) - p2.begin()) == k)
      ++correct_noise;
  }
  CHECK(correct_informative > correct_noise);
}

TEST_CASE("afacontext matches table shapes and its structural invariants") {
  const DatasetBundle b = generate_afacontext(AfaContextSpec{}, 0);
  CHECK(b.train.x.rows == 700);
  CHECK(b.train.x.cols == 30);
  CHECK(b.num_classes == 8);
  CHECK(b.val.x.rows == 150);
  CHECK(b.test.x.rows == 150);
  // exactly one context feature set per instance
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    const double f0 = b.train.x(i, 0), f1 = b.train.x(i, 1);
    CHECK(((f0 == 1.0 && f1 == 0.0) || (f0 == 0.0 && f1 == 1.0)));
  }
}

TEST_CASE("afacontext context features carry no label information") {
  AfaContextSpec spec;
  spec.n_train = 100000;
  spec.n_val = 8;
  spec.n_test = 8;
  const DatasetBundle b = generate_afacontext(spec, 9);
  // plug-in MI between the context bit and the label
  double joint[2][8] = {};
  double pc[2] = {}, py[8] = {};
  const auto n = static_cast<double>(b.train.x.rows);
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    const int c = b.train.x(i, 0) == 1.0 ? 0 : 1;
    const int y = b.train.y[i];
    joint[c][y] += 1.0 / n;
    pc[c] += 1.0 / n;
    py[y] += 1.0 / n;
  }
  double mi = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      if (joint[c][y] > 0.0) mi += joint[c][y] * std::log(joint[c][y] / (pc[c] * py[y]));
  CHECK(mi < 0.01);
  // conditional on context A, group-B features look like pure noise
  double mean_b = 0.0, var_b = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    if (b.train.x(i, 0) != 1.0) continue;
    for (std::size_t j = 12; j < 22; ++j) {
      mean_b += b.train.x(i, j);
      ++count;
    }
  }
  mean_b /= static_cast<double>(count);
  for (std::size_t i = 0; i < b.train.x.rows; ++i) {
    if (b.train.x(i, 0) != 1.0) continue;
    for (std::size_t j = 12; j < 22; ++j)
      var_b += (b.train.x(i, j) - mean_b) * (b.train.x(i, j) - mean_b);
  }
  var_b /= static_cast<double>(count);
  CHECK(mean_b == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::sqrt(var_b) == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("csv loading splits deterministically and standardizes with train stats") {
  const std::string path = "test_tiny.csv";
  {
    std::ofstream f(path);
    f << "a,b,const,label\n";
    for (int i = 0; i < 10; ++i)
      f << i << "," << 10 - i << ",5,"
        << (i % 2) << "\n";
  }
  CsvSchema schema;
  schema.label_column = "label";
  schema.num_classes = 2;

  const DatasetBundle b = load_csv(path, schema, 0);
  CHECK(b.train.x.rows == 7);
  CHECK(b.val.x.rows == 1);
  CHECK(b.test.x.rows == 2);
  CHECK(b.n_features == 3);

  // constant column standardized to zeros (sd guarded to 1)
  for (std::size_t i = 0; i < b.train.x.rows; ++i) CHECK(b.train.x(i, 2) == 0.0);
  REQUIRE(b.standardization.has_value());
  CHECK(b.standardization->sd[2] == 1.0);

  // train column 'a' has zero mean and unit variance after standardization
  double mean = 0.0;
  for (std::size_t i = 0; i < b.train.x.rows; ++i) mean += b.train.x(i, 0);
  CHECK(std::abs(mean / 7.0) < 1e-12);

  const DatasetBundle b2 = load_csv(path, schema, 0);
  CHECK(b.data_fingerprint() == b2.data_fingerprint());

  CsvSchema bad = schema;
  bad.label_column = "missing";
  CHECK_THROWS(load_csv(path, bad, 0));

  {
    std::ofstream f(path, std::ios::app);
    f << "oops,1,5,0\n";
  }
  CHECK_THROWS(load_csv(path, schema, 0));
  std::remove(path.c_str());
}

TEST_CASE("csv rejects unknown label values") {
  const std::string path = "test_badlabel.csv";
  {
    std::ofstream f(path);
    f << "a,label\n1,0\n2,7\n";
  }
  CsvSchema schema;
  schema.label_column = "label";
  schema.num_classes = 2;
  CHECK_THROWS(load_csv(path, schema, 0));
  std::remove(path.c_str());
}

TEST_CASE("mask sampling hits the expected hidden rate") {
  MaskingDistribution dist{0.0, 0.9};
  Rng rng(1);
  double hidden = 0.0;
  const int batches = 1000;
  const std::size_t per = 100;
  for (int b = 0; b < batches; ++b) {
    const Matrix m = sample_mask(1, per, dist, rng);
    for (const double v : m.data) hidden += v == 0.0 ? 1.0 : 0.0;
  }
  const double rate = hidden / static_cast<double>(batches * per);
  CHECK(rate > 0.43);
  CHECK(rate < 0.47);

  MaskingDistribution all_obs{0.0, 0.0};
  const Matrix m = sample_mask(4, 6, all_obs, rng);
  for (const double v : m.data) CHECK(v == 1.0);

  const auto mnist = MaskingDistribution::for_dataset("mnist");
  CHECK(mnist.low == 0.75);
  CHECK(mnist.high == 0.99);
  const auto other = MaskingDistribution::for_dataset("cube");
  CHECK(other.low == 0.0);
  CHECK(other.high == 0.9);

  MaskingDistribution invalid{0.5, 0.2};
  CHECK_THROWS_AS(invalid.validate(), std::invalid_argument);
}

TEST_CASE("dataset csv files are byte-identical across runs") {
  CubeSpec spec;
  spec.n_train = 50;
  spec.n_val = 10;
  spec.n_test = 10;
  const DatasetBundle a = generate_cube(spec, 4);
  write_dataset_csv(a.train, "test_gen_a.csv");
  const DatasetBundle b = generate_cube(spec, 4);
  write_dataset_csv(b.train, "test_gen_b.csv");
  std::ifstream fa("test_gen_a.csv"), fb("test_gen_b.csv");
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
  std::remove("test_gen_a.csv");
  std::remove("test_gen_b.csv");
}
