#include "afa/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace afa {

void MaskedInput::validate() const {
  if (values.size() != mask.size())
    throw std::invalid_argument("MaskedInput: values/mask length mismatch");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw std::invalid_argument("MaskedInput: mask entries must be 0 or 1");
    if (mask[i] == 0.0 && values[i] != 0.0)
      throw std::invalid_argument("MaskedInput: unobserved values must be zero");
  }
}

Matrix ProbModel::predict_batch(const Matrix& values, const Matrix& mask) const {
  Matrix out(values.rows, static_cast<std::size_t>(num_classes()));
  MaskedInput m;
  for (std::size_t i = 0; i < values.rows; ++i) {
    m.values.assign(values.row(i), values.row(i) + values.cols);
    m.mask.assign(mask.row(i), mask.row(i) + mask.cols);
    const auto p = predict(m);
    std::copy(p.begin(), p.end(), out.row(i));
  }
  return out;
}

std::vector<double> ProbModel::certainty(const MaskedInput& m, int passes, Rng&) const {
  if (passes < 1) throw std::invalid_argument("certainty: passes must be >= 1");
  return predict(m);
}

MaskedClassifier::MaskedClassifier(Mlp mlp, std::size_t d, int num_classes)
    : mlp_(std::move(mlp)), d_(d), num_classes_(num_classes) {
  if (mlp_.config().input_dim != 2 * d)
    throw std::invalid_argument("MaskedClassifier: mlp input dim must be 2d");
  if (mlp_.config().output_dim != static_cast<std::size_t>(num_classes))
    throw std::invalid_argument("MaskedClassifier: mlp output dim must equal num classes");
}

namespace {

Matrix concat_values_mask(const Matrix& values, const Matrix& mask) {
  if (values.rows != mask.rows || values.cols != mask.cols)
    throw std::invalid_argument("concat_values_mask: shape mismatch");
  Matrix x(values.rows, 2 * values.cols);
  for (std::size_t i = 0; i < values.rows; ++i) {
    double* r = x.row(i);
    std::copy(values.row(i), values.row(i) + values.cols, r);
    std::copy(mask.row(i), mask.row(i) + mask.cols, r + values.cols);
  }
  return x;
}

Matrix input_row(const MaskedInput& m) {
  Matrix x(1, 2 * m.values.size());
  std::copy(m.values.begin(), m.values.end(), x.row(0));
  std::copy(m.mask.begin(), m.mask.end(), x.row(0) + m.values.size());
  return x;
}

}  // namespace

std::vector<double> MaskedClassifier::predict(const MaskedInput& m) const {
  if (m.values.size() != d_) throw std::invalid_argument("predict: dimension mismatch");
  const Matrix p = softmax(mlp_.forward(input_row(m)));
  return {p.data.begin(), p.data.end()};
}

Matrix MaskedClassifier::predict_batch(const Matrix& values, const Matrix& mask) const {
  return softmax(logits_batch(values, mask));
}

Matrix MaskedClassifier::logits_batch(const Matrix& values, const Matrix& mask) const {
  if (values.cols != d_) throw std::invalid_argument("logits_batch: dimension mismatch");
  return mlp_.forward(concat_values_mask(values, mask));
}

std::vector<double> MaskedClassifier::certainty(const MaskedInput& m, int passes,
                                                Rng& rng) const {
  if (passes < 1) throw std::invalid_argument("certainty: passes must be >= 1");
  const Matrix x = input_row(m);
  std::vector<double> acc(static_cast<std::size_t>(num_classes_), 0.0);
  for (int pass = 0; pass < passes; ++pass) {
    const Matrix p = softmax(mlp_.forward(x, /*train_mode=*/true, &rng));
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += p(0, j);
  }
  for (auto& v : acc) v /= static_cast<double>(passes);
  return acc;
}

nlohmann::json MaskedClassifier::to_json() const {
  nlohmann::json j;
  j["d"] = d_;
  j["num_classes"] = num_classes_;
  j["mlp"] = mlp_.to_json();
  return j;
}

MaskedClassifier MaskedClassifier::from_json(const nlohmann::json& j) {
  MaskedClassifier c;
  c.d_ = j.at("d").get<std::size_t>();
  c.num_classes_ = j.at("num_classes").get<int>();
  c.mlp_ = Mlp::from_json(j.at("mlp"));
  return c;
}

namespace {

Matrix apply_mask(const Matrix& x, const Matrix& mask) {
  Matrix v = x;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] *= mask.data[i];
  return v;
}

double eval_loss(const Mlp& mlp, const Matrix& values, const Matrix& mask,
                 const std::vector<int>& labels, const std::vector<double>& weights) {
  const Matrix logits = mlp.forward(concat_values_mask(apply_mask(values, mask), mask));
  return weighted_cross_entropy(logits, labels, weights).loss;
}

}  // namespace

MaskedClassifier train_masked_classifier(const DatasetBundle& data,
                                         const MaskingDistribution& masking,
                                         const TrainConfig& cfg, std::uint64_t seed,
                                         const PretrainOptions& opts) {
  masking.validate();
  const std::size_t d = data.n_features;
  const std::size_t n = data.train.x.rows;
  if (n == 0 || data.val.x.rows == 0)
    throw std::invalid_argument("train_masked_classifier: train and val splits required");

  Rng rng(seed);
  Rng init_rng = rng.fork(0), mask_rng = rng.fork(1), drop_rng = rng.fork(2),
      shuffle_rng = rng.fork(3), valmask_rng = rng.fork(4);

  MlpConfig mcfg;
  mcfg.input_dim = 2 * d;
  mcfg.hidden_dims = opts.hidden_dims;
  mcfg.output_dim = static_cast<std::size_t>(data.num_classes);
  mcfg.dropout_rate = opts.dropout_rate;
  Mlp mlp(mcfg, init_rng);

  std::vector<double> weights = cfg.class_weights.empty()
                                    ? class_weights_from_labels(data.train.y, data.num_classes)
                                    : cfg.class_weights;

  std::vector<double> allowed(d, 1.0);
  if (!opts.restrict_features.empty()) {
    std::fill(allowed.begin(), allowed.end(), 0.0);
    for (const int i : opts.restrict_features) allowed[static_cast<std::size_t>(i)] = 1.0;
  }
  const auto restrict_mask = [&](Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = 0; j < d; ++j) m(i, j) *= allowed[j];
  };

  // Fixed validation mask at the minimum masking level.
  Matrix val_mask = sample_mask(data.val.x.rows, d,
                                {opts.val_masking_prob, opts.val_masking_prob}, valmask_rng);
  restrict_mask(val_mask);

  Adam opt(cfg.learning_rate);
  MlpGrads grads = mlp.make_grads();
  auto params = param_refs(mlp);
  auto grefs = param_refs(grads);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<DenseLayer> best_layers = mlp.layers();
  double best_val = eval_loss(mlp, data.val.x, val_mask, data.val.y, weights);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Matrix xb(bs, d);
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        std::copy(data.train.x.row(order[start + i]), data.train.x.row(order[start + i]) + d,
                  xb.row(i));
        yb[i] = data.train.y[order[start + i]];
      }
      Matrix mask = sample_mask(bs, d, masking, mask_rng);
      restrict_mask(mask);
      const Matrix input = concat_values_mask(apply_mask(xb, mask), mask);
      MlpTape tape;
      const Matrix logits = mlp.forward(input, tape, /*train_mode=*/true, &drop_rng);
      LossGrad lg = weighted_cross_entropy(logits, yb, weights);
      if (!std::isfinite(lg.loss))
        throw std::runtime_error("train_masked_classifier: non-finite loss at epoch " +
                                 std::to_string(epoch));
      grads.zero();
      mlp.backward(tape, lg.dlogits, grads);
      opt.step(params, grefs);
    }
    const double val = eval_loss(mlp, data.val.x, val_mask, data.val.y, weights);
    if (val < best_val) {
      best_val = val;
      best_layers = mlp.layers();
      since_best = 0;
    } else if (++since_best > cfg.early_stop_patience) {
      break;
    }
  }
  mlp.layers() = std::move(best_layers);
  return MaskedClassifier(std::move(mlp), d, data.num_classes);
}

SharedPredictor pretrain_shared(const DatasetBundle& data, const MaskingDistribution& masking,
                                const TrainConfig& cfg, std::uint64_t seed,
                                const PretrainOptions& opts) {
  SharedPredictor p;
  p.model = train_masked_classifier(data, masking, cfg, seed, opts);
  p.manifest["dataset"] = data.name;
  p.manifest["dataset_fingerprint"] = data.data_fingerprint();
  p.manifest["seed"] = seed;
  p.manifest["masking"] = {{"low", masking.low}, {"high", masking.high}};
  p.manifest["weights_fingerprint"] = p.weights_fingerprint();
  return p;
}

void save_predictor(const SharedPredictor& p, const std::string& path) {
  nlohmann::json j;
  j["format"] = "afabench-predictor";
  j["version"] = 1;
  j["manifest"] = p.manifest;
  j["model"] = p.model.to_json();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_predictor: cannot open " + path);
  f << j.dump();
}

SharedPredictor load_predictor(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_predictor: cannot open " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "afabench-predictor")
    throw std::runtime_error("load_predictor: unexpected format in " + path);
  SharedPredictor p;
  p.manifest = j.at("manifest");
  p.model = MaskedClassifier::from_json(j.at("model"));
  return p;
}

double masked_accuracy(const ProbModel& model, const TabularDataset& ds, const Matrix& mask) {
  Matrix values(ds.x.rows, ds.x.cols);
  for (std::size_t i = 0; i < ds.x.size(); ++i) values.data[i] = ds.x.data[i] * mask.data[i];
  const Matrix probs = model.predict_batch(values, mask);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const double* r = probs.row(i);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (r[j] > r[arg]) arg = j;
    if (static_cast<int>(arg) == ds.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows);
}

double full_observation_accuracy(const ProbModel& model, const TabularDataset& ds) {
  return masked_accuracy(model, ds, Matrix(ds.x.rows, ds.x.cols, 1.0));
}

MaskedInput make_masked_input(const double* row, const std::vector<double>& mask) {
  MaskedInput m;
  m.mask = mask;
  m.values.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) m.values[i] = mask[i] != 0.0 ? row[i] : 0.0;
  return m;
}

}  // namespace afa
