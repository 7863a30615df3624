#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "afa/data.hpp"
#include "afa/nn.hpp"

namespace afa::testutil {

// Central-difference gradient of a scalar function of a flat parameter block.
inline std::vector<double> finite_difference(const std::function<double()>& loss,
                                             double* params, std::size_t n,
                                             double h = 1e-5) {
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-4});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Exact posterior for the CUBE generative model restricted to an observed
// subset: features are independent Gaussians given the class.
inline std::vector<double> cube_bayes_posterior(const CubeSpec& spec,
                                                const std::vector<double>& values,
                                                const std::vector<double>& mask) {
  std::vector<double> logp(static_cast<std::size_t>(spec.n_classes), 0.0);
  for (int k = 0; k < spec.n_classes; ++k) {
    for (std::size_t j = 0; j < spec.n_features; ++j) {
      if (mask[j] == 0.0) continue;
      double mean = spec.noise_mean, sigma = spec.noise_sigma;
      if (j >= static_cast<std::size_t>(k) && j < static_cast<std::size_t>(k) + 3) {
        mean = spec.informative_mean(k, j - static_cast<std::size_t>(k));
        sigma = spec.informative_sigma;
      }
      const double z = (values[j] - mean) / sigma;
      logp[static_cast<std::size_t>(k)] += -0.5 * z * z - std::log(sigma);
    }
  }
  double zmax = logp[0];
  for (const double v : logp) zmax = std::max(zmax, v);
  double sum = 0.0;
  std::vector<double> p(logp.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(logp[k] - zmax);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

// Binary label with x0 = y exactly and x1 independent noise.
inline DatasetBundle copy_feature_dataset(std::size_t n_train, std::size_t n_val,
                                          std::size_t n_test, std::uint64_t seed) {
  DatasetBundle b;
  b.name = "copytoy";
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
      ds.x(i, 0) = static_cast<double>(y);
      ds.x(i, 1) = rng.normal();
    }
  };
  fill(b.train, n_train, Split::train);
  fill(b.val, n_val, Split::val);
  fill(b.test, n_test, Split::test);
  return b;
}

// d features, feature 0 determines the binary label, the rest pure noise.
inline DatasetBundle single_informative_dataset(std::size_t d, std::size_t n_train,
                                                std::size_t n_val, std::size_t n_test,
                                                std::uint64_t seed) {
  DatasetBundle b;
  b.name = "singletoy";
  b.seed = seed;
  b.num_classes = 2;
  b.n_features = d;
  Rng rng(seed);
  auto fill = [&](TabularDataset& ds, std::size_t n, Split split) {
    ds.x = Matrix(n, d);
    ds.y.assign(n, 0);
    ds.num_classes = 2;
    ds.split = split;
    ds.name = b.name;
    for (std::size_t i = 0; i < n; ++i) {
      const int y = rng.uniform() < 0.5 ? 0 : 1;
      ds.y[i] = y;
      ds.x(i, 0) = static_cast<double>(y) + 0.05 * rng.normal();
      for (std::size_t j = 1; j < d; ++j) ds.x(i, j) = rng.normal();
    }
  };
  fill(b.train, n_train, Split::train);
  fill(b.val, n_val, Split::val);
  fill(b.test, n_test, Split::test);
  return b;
}

}  // namespace afa::testutil
