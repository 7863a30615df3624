#include "afa/pvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace afa {

namespace {

constexpr double kLogVarMin = -8.0;
constexpr double kLogVarMax = 6.0;
constexpr double kLog2Pi = 1.8378770664093453;

double clamp_logvar(double v) { return std::min(std::max(v, kLogVarMin), kLogVarMax); }

Matrix concat_vm(const Matrix& values, const Matrix& mask) {
  Matrix x(values.rows, 2 * values.cols);
  for (std::size_t i = 0; i < values.rows; ++i) {
    double* r = x.row(i);
    std::copy(values.row(i), values.row(i) + values.cols, r);
    std::copy(mask.row(i), mask.row(i) + mask.cols, r + values.cols);
  }
  return x;
}

}  // namespace

PvaeConfig PvaeConfig::for_dataset(std::size_t d, const std::string& name) {
  PvaeConfig cfg;
  cfg.d = d;
  cfg.latent_dim = d <= 50 ? 16 : 32;
  cfg.beta = name == "afacontext" ? 0.01 : 0.1;
  return cfg;
}

Pvae::Pvae(const PvaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d < 1) throw std::invalid_argument("Pvae: d must be >= 1");
  MlpConfig e;
  e.input_dim = 2 * cfg.d;
  e.hidden_dims = cfg.enc_hidden;
  e.output_dim = 2 * cfg.latent_dim;
  enc_ = Mlp(e, rng);
  MlpConfig dcfg;
  dcfg.input_dim = cfg.latent_dim;
  dcfg.hidden_dims = cfg.dec_hidden;
  dcfg.output_dim = 2 * cfg.d;
  dec_ = Mlp(dcfg, rng);
}

void Pvae::encode(const Matrix& values, const Matrix& mask, Matrix& mu, Matrix& logvar) const {
  const Matrix out = enc_.forward(concat_vm(values, mask));
  const std::size_t L = cfg_.latent_dim;
  mu = Matrix(out.rows, L);
  logvar = Matrix(out.rows, L);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      mu(i, l) = out(i, l);
      logvar(i, l) = clamp_logvar(out(i, L + l));
    }
}

void Pvae::decode(const Matrix& z, Matrix& mean, Matrix& sd) const {
  const Matrix out = dec_.forward(z);
  const std::size_t d = cfg_.d;
  mean = Matrix(out.rows, d);
  sd = Matrix(out.rows, d);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      mean(i, j) = out(i, j);
      sd(i, j) = std::exp(0.5 * clamp_logvar(out(i, d + j)));
    }
}

GaussianParams Pvae::posterior_sample(const MaskedInput& m, Rng& rng) const {
  Matrix values(1, cfg_.d), mask(1, cfg_.d);
  std::copy(m.values.begin(), m.values.end(), values.row(0));
  std::copy(m.mask.begin(), m.mask.end(), mask.row(0));
  Matrix mu, logvar;
  encode(values, mask, mu, logvar);
  Matrix z(1, cfg_.latent_dim);
  for (std::size_t l = 0; l < cfg_.latent_dim; ++l)
    z(0, l) = mu(0, l) + std::exp(0.5 * logvar(0, l)) * rng.normal();
  Matrix mean, sd;
  decode(z, mean, sd);
  GaussianParams g;
  g.mean.assign(mean.row(0), mean.row(0) + cfg_.d);
  g.sd.assign(sd.row(0), sd.row(0) + cfg_.d);
  return g;
}

double Pvae::sample_feature(const MaskedInput& m, int i, Rng& rng) const {
  const GaussianParams g = posterior_sample(m, rng);
  const auto idx = static_cast<std::size_t>(i);
  return g.mean[idx] + g.sd[idx] * rng.normal();
}

nlohmann::json Pvae::to_json() const {
  nlohmann::json j;
  j["d"] = cfg_.d;
  j["latent_dim"] = cfg_.latent_dim;
  j["beta"] = cfg_.beta;
  j["encoder"] = enc_.to_json();
  j["decoder"] = dec_.to_json();
  return j;
}

Pvae Pvae::from_json(const nlohmann::json& j) {
  Pvae p;
  p.cfg_.d = j.at("d").get<std::size_t>();
  p.cfg_.latent_dim = j.at("latent_dim").get<std::size_t>();
  p.cfg_.beta = j.at("beta").get<double>();
  p.enc_ = Mlp::from_json(j.at("encoder"));
  p.dec_ = Mlp::from_json(j.at("decoder"));
  return p;
}

namespace {

struct ElboParts {
  double nll = 0.0;  // mean Gaussian reconstruction NLL per sample
  double kl = 0.0;   // mean KL per sample
  double elbo() const { return -(nll + kl); }
};

// One training step worth of forward/backward on a batch. When grads are
// null, only evaluates. Reconstruction covers the full feature vector; the
// random masking makes the unobserved-given-observed case the common one.
ElboParts pvae_batch(Pvae& model, const Matrix& xb, const Matrix& mask, double beta, Rng* noise,
                     MlpGrads* enc_grads, MlpGrads* dec_grads) {
  const std::size_t n = xb.rows;
  const std::size_t d = model.config().d;
  const std::size_t L = model.config().latent_dim;
  const double inv_n = 1.0 / static_cast<double>(n);

  Matrix values(n, d);
  for (std::size_t i = 0; i < values.size(); ++i) values.data[i] = xb.data[i] * mask.data[i];

  MlpTape enc_tape;
  const Matrix enc_out = model.encoder().forward(concat_vm(values, mask), enc_tape);

  Matrix z(n, L), eps(n, L);
  Matrix mu(n, L), lv(n, L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      mu(i, l) = enc_out(i, l);
      lv(i, l) = clamp_logvar(enc_out(i, L + l));
      const double e = noise ? noise->normal() : 0.0;
      eps(i, l) = e;
      z(i, l) = mu(i, l) + std::exp(0.5 * lv(i, l)) * e;
    }

  MlpTape dec_tape;
  const Matrix dec_out = model.decoder().forward(z, dec_tape);

  ElboParts parts;
  Matrix d_dec(n, 2 * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double m = dec_out(i, j);
      const double raw_lv = dec_out(i, d + j);
      const double lvx = clamp_logvar(raw_lv);
      const double var = std::exp(lvx);
      const double diff = xb(i, j) - m;
      parts.nll += 0.5 * (diff * diff / var + lvx + kLog2Pi) * inv_n;
      d_dec(i, j) = -diff / var * inv_n;
      if (raw_lv > kLogVarMin && raw_lv < kLogVarMax)
        d_dec(i, d + j) = 0.5 * (1.0 - diff * diff / var) * inv_n;
    }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l)
      parts.kl += beta * 0.5 * (std::exp(lv(i, l)) + mu(i, l) * mu(i, l) - 1.0 - lv(i, l)) * inv_n;

  if (!enc_grads || !dec_grads) return parts;

  const Matrix dz = model.decoder().backward(dec_tape, d_dec, *dec_grads);

  Matrix d_enc(n, 2 * L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      const double raw_lv = enc_out(i, L + l);
      const bool lv_active = raw_lv > kLogVarMin && raw_lv < kLogVarMax;
      d_enc(i, l) = dz(i, l) + beta * mu(i, l) * inv_n;
      if (lv_active) {
        d_enc(i, L + l) = dz(i, l) * 0.5 * std::exp(0.5 * lv(i, l)) * eps(i, l) +
                          beta * 0.5 * (std::exp(lv(i, l)) - 1.0) * inv_n;
      }
    }
  model.encoder().backward(enc_tape, d_enc, *enc_grads);
  return parts;
}

}  // namespace

PvaeTrainResult train_pvae(const DatasetBundle& data, const MaskingDistribution& masking,
                           const TrainConfig& cfg, std::uint64_t seed, PvaeConfig pvae_cfg) {
  masking.validate();
  if (pvae_cfg.d == 0) pvae_cfg = PvaeConfig::for_dataset(data.n_features, data.name);
  const std::size_t d = data.n_features;
  const std::size_t n = data.train.x.rows;

  Rng rng(seed);
  Rng init_rng = rng.fork(0), mask_rng = rng.fork(1), noise_rng = rng.fork(2),
      shuffle_rng = rng.fork(3), val_rng = rng.fork(4);

  PvaeTrainResult result;
  result.model = Pvae(pvae_cfg, init_rng);
  Pvae& model = result.model;

  Adam enc_opt(cfg.learning_rate), dec_opt(cfg.learning_rate);
  MlpGrads enc_grads = model.encoder().make_grads();
  MlpGrads dec_grads = model.decoder().make_grads();
  auto enc_params = param_refs(model.encoder());
  auto dec_params = param_refs(model.decoder());
  auto enc_grefs = param_refs(enc_grads);
  auto dec_grefs = param_refs(dec_grads);

  // Fixed validation masks/noise so the ELBO curve is comparable across epochs.
  Matrix val_mask = sample_mask(data.val.x.rows, d, masking, val_rng);
  Rng val_noise_proto = val_rng.fork(7);

  auto val_elbo = [&]() {
    Rng noise = val_noise_proto;
    const ElboParts parts =
        pvae_batch(model, data.val.x, val_mask, pvae_cfg.beta, &noise, nullptr, nullptr);
    return parts.elbo();
  };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<DenseLayer> best_enc = model.encoder().layers();
  std::vector<DenseLayer> best_dec = model.decoder().layers();
  double best = val_elbo();
  std::size_t since_best = 0;
  int low_kl_epochs = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_kl = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Matrix xb(bs, d);
      for (std::size_t i = 0; i < bs; ++i)
        std::copy(data.train.x.row(order[start + i]), data.train.x.row(order[start + i]) + d,
                  xb.row(i));
      const Matrix mask = sample_mask(bs, d, masking, mask_rng);
      enc_grads.zero();
      dec_grads.zero();
      const ElboParts parts =
          pvae_batch(model, xb, mask, pvae_cfg.beta, &noise_rng, &enc_grads, &dec_grads);
      if (!std::isfinite(parts.nll) || !std::isfinite(parts.kl))
        throw std::runtime_error("train_pvae: non-finite loss at epoch " + std::to_string(epoch));
      enc_opt.step(enc_params, enc_grefs);
      dec_opt.step(dec_params, dec_grefs);
      epoch_kl += parts.kl / std::max(pvae_cfg.beta, 1e-12);
      ++batches;
    }
    if (batches > 0 && epoch_kl / static_cast<double>(batches) < 1e-3) {
      if (++low_kl_epochs >= 5) result.posterior_collapse_warning = true;
    } else {
      low_kl_epochs = 0;
    }
    const double elbo = val_elbo();
    if (elbo > best) {
      best = elbo;
      best_enc = model.encoder().layers();
      best_dec = model.decoder().layers();
      since_best = 0;
    } else if (++since_best > cfg.early_stop_patience) {
      break;
    }
  }
  model.encoder().layers() = std::move(best_enc);
  model.decoder().layers() = std::move(best_dec);
  result.best_val_elbo = best;
  result.manifest["dataset"] = data.name;
  result.manifest["dataset_fingerprint"] = data.data_fingerprint();
  result.manifest["seed"] = seed;
  result.manifest["beta"] = pvae_cfg.beta;
  result.manifest["latent_dim"] = pvae_cfg.latent_dim;
  result.manifest["posterior_collapse_warning"] = result.posterior_collapse_warning;
  return result;
}

void save_pvae(const PvaeTrainResult& p, const std::string& path) {
  nlohmann::json j;
  j["format"] = "afabench-pvae";
  j["version"] = 1;
  j["manifest"] = p.manifest;
  j["best_val_elbo"] = p.best_val_elbo;
  j["model"] = p.model.to_json();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_pvae: cannot open " + path);
  f << j.dump();
}

PvaeTrainResult load_pvae(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_pvae: cannot open " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "afabench-pvae")
    throw std::runtime_error("load_pvae: unexpected format in " + path);
  PvaeTrainResult p;
  p.manifest = j.at("manifest");
  p.best_val_elbo = j.at("best_val_elbo").get<double>();
  p.model = Pvae::from_json(j.at("model"));
  p.posterior_collapse_warning = p.manifest.value("posterior_collapse_warning", false);
  return p;
}

}  // namespace afa
