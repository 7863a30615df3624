#pragma once

#include "afa/data.hpp"
#include "afa/nn.hpp"
#include "afa/predictor.hpp"

namespace afa {

struct PvaeConfig {
  std::size_t d = 0;
  std::size_t latent_dim = 16;  // 32 for datasets with more than 50 features
  std::vector<std::size_t> enc_hidden = {128, 128};
  std::vector<std::size_t> dec_hidden = {128, 128};
  double beta = 0.1;  // KL scale; 0.01 on afacontext

  static PvaeConfig for_dataset(std::size_t d, const std::string& name);
};

struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> sd;
};

// VAE whose encoder consumes (masked values, mask) and whose decoder emits a
// per-feature Gaussian, usable with arbitrary observation patterns.
class Pvae {
 public:
  Pvae() = default;
  Pvae(const PvaeConfig& cfg, Rng& rng);

  const PvaeConfig& config() const { return cfg_; }

  // q(z | x_S) parameters for a batch of masked rows.
  void encode(const Matrix& values, const Matrix& mask, Matrix& mu, Matrix& logvar) const;
  // decoder Gaussians for a batch of latents: means and sds are n x d.
  void decode(const Matrix& z, Matrix& mean, Matrix& sd) const;

  // Draws one latent from q(z|x_S) and returns the per-feature decoder Gaussian.
  GaussianParams posterior_sample(const MaskedInput& m, Rng& rng) const;
  // One imputed value for feature i given the observed part of m.
  double sample_feature(const MaskedInput& m, int i, Rng& rng) const;

  Mlp& encoder() { return enc_; }
  Mlp& decoder() { return dec_; }
  const Mlp& encoder() const { return enc_; }
  const Mlp& decoder() const { return dec_; }

  nlohmann::json to_json() const;
  static Pvae from_json(const nlohmann::json& j);

 private:
  PvaeConfig cfg_;
  Mlp enc_;  // 2d -> 2*latent (mu, logvar)
  Mlp dec_;  // latent -> 2d (mean, logvar)
};

struct PvaeTrainResult {
  Pvae model;
  double best_val_elbo = 0.0;
  bool posterior_collapse_warning = false;
  nlohmann::json manifest;
};

// Maximizes the masked ELBO (Gaussian reconstruction of the full feature
// vector given the observed subset, minus beta * KL). Keeps the checkpoint
// with the best validation ELBO.
PvaeTrainResult train_pvae(const DatasetBundle& data, const MaskingDistribution& masking,
                           const TrainConfig& cfg, std::uint64_t seed,
                           PvaeConfig pvae_cfg = {});

void save_pvae(const PvaeTrainResult& p, const std::string& path);
PvaeTrainResult load_pvae(const std::string& path);

}  // namespace afa
