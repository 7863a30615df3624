#include "afa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace afa {

void MlpConfig::validate() const {
  if (input_dim < 1 || output_dim < 1)
    throw std::invalid_argument("MlpConfig: dims must be >= 1");
  for (auto h : hidden_dims)
    if (h < 1) throw std::invalid_argument("MlpConfig: hidden dims must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("MlpConfig: dropout_rate must be in [0,1)");
}

void MlpGrads::zero() {
  for (auto& l : layers) {
    l.w.fill(0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

Mlp::Mlp(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  std::vector<std::size_t> dims;
  dims.push_back(cfg.input_dim);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(cfg.output_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer;
    layer.w = Matrix(dims[i], dims[i + 1]);
    layer.b.assign(dims[i + 1], 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    for (auto& v : layer.w.data) v = rng.uniform(-limit, limit);
    layers_.push_back(std::move(layer));
  }
}

namespace {

Matrix dense_forward(const Matrix& x, const DenseLayer& l) {
  Matrix z = matmul(x, l.w);
  for (std::size_t i = 0; i < z.rows; ++i) {
    double* zi = z.row(i);
    for (std::size_t j = 0; j < z.cols; ++j) zi[j] += l.b[j];
  }
  return z;
}

}  // namespace

Matrix Mlp::forward(const Matrix& x, bool train_mode, Rng* rng) const {
  MlpTape tape;
  return forward(x, tape, train_mode, rng);
}

Matrix Mlp::forward(const Matrix& x, MlpTape& tape, bool train_mode, Rng* rng) const {
  if (x.cols != cfg_.input_dim) throw std::invalid_argument("Mlp::forward: input dim mismatch");
  const bool use_dropout = train_mode && cfg_.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr)
    throw std::invalid_argument("Mlp::forward: dropout requires an rng in train mode");

  tape.inputs.clear();
  tape.relu_out.clear();
  tape.drop_mask.clear();

  Matrix a = x;
  for (std::size_t li = 0; li + 1 < layers_.size(); ++li) {
    tape.inputs.push_back(a);
    Matrix z = dense_forward(a, layers_[li]);
    for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
    tape.relu_out.push_back(z);
    if (use_dropout) {
      const double keep = 1.0 - cfg_.dropout_rate;
      Matrix mask(z.rows, z.cols);
      for (auto& m : mask.data) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) z.data[i] *= mask.data[i];
      tape.drop_mask.push_back(std::move(mask));
    } else {
      tape.drop_mask.emplace_back();
    }
    a = std::move(z);
  }
  tape.inputs.push_back(a);
  return dense_forward(tape.inputs.back(), layers_.back());
}

Matrix Mlp::backward(const MlpTape& tape, const Matrix& grad_out, MlpGrads& grads) const {
  if (grads.layers.size() != layers_.size())
    throw std::invalid_argument("Mlp::backward: grads shape mismatch");

  Matrix dz = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseLayer& l = layers_[li];
    DenseLayer& g = grads.layers[li];
    const Matrix& input = tape.inputs[li];

    // dW += input^T * dz ; db += colsum(dz)
    Matrix dw = matmul_at_b(input, dz);
    for (std::size_t i = 0; i < dw.size(); ++i) g.w.data[i] += dw.data[i];
    for (std::size_t i = 0; i < dz.rows; ++i) {
      const double* r = dz.row(i);
      for (std::size_t j = 0; j < dz.cols; ++j) g.b[j] += r[j];
    }

    Matrix da = matmul_a_bt(dz, l.w);
    if (li == 0) return da;

    // through dropout then ReLU of the previous hidden layer
    const Matrix& mask = tape.drop_mask[li - 1];
    const Matrix& relu = tape.relu_out[li - 1];
    if (!mask.empty()) {
      for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= mask.data[i];
    }
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (relu.data[i] <= 0.0) da.data[i] = 0.0;
    }
    dz = std::move(da);
  }
  return Matrix();
}

MlpGrads Mlp::make_grads() const {
  MlpGrads g;
  for (const auto& l : layers_) {
    DenseLayer z;
    z.w = Matrix(l.w.rows, l.w.cols);
    z.b.assign(l.b.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  return g;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["input_dim"] = cfg_.input_dim;
  j["hidden_dims"] = cfg_.hidden_dims;
  j["output_dim"] = cfg_.output_dim;
  j["dropout_rate"] = cfg_.dropout_rate;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    nlohmann::json lj;
    lj["rows"] = l.w.rows;
    lj["cols"] = l.w.cols;
    lj["w"] = l.w.data;
    lj["b"] = l.b;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp mlp;
  mlp.cfg_.input_dim = j.at("input_dim").get<std::size_t>();
  mlp.cfg_.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  mlp.cfg_.output_dim = j.at("output_dim").get<std::size_t>();
  mlp.cfg_.dropout_rate = j.at("dropout_rate").get<double>();
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    l.w = Matrix(lj.at("rows").get<std::size_t>(), lj.at("cols").get<std::size_t>());
    l.w.data = lj.at("w").get<std::vector<double>>();
    if (l.w.data.size() != l.w.rows * l.w.cols)
      throw std::runtime_error("Mlp::from_json: weight size mismatch");
    l.b = lj.at("b").get<std::vector<double>>();
    mlp.layers_.push_back(std::move(l));
  }
  return mlp;
}

std::vector<ParamRef> param_refs(std::vector<DenseLayer>& layers) {
  std::vector<ParamRef> refs;
  for (auto& l : layers) {
    refs.push_back({l.w.data.data(), l.w.data.size()});
    refs.push_back({l.b.data(), l.b.size()});
  }
  return refs;
}

std::vector<ParamRef> param_refs(Mlp& mlp) { return param_refs(mlp.layers()); }
std::vector<ParamRef> param_refs(MlpGrads& grads) { return param_refs(grads.layers); }

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be > 0");
}

void Adam::step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("Adam::step: param/grad count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].n, 0.0);
      v_[i].assign(params[i].n, 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].n != m_[i].size())
      throw std::invalid_argument("Adam::step: parameter size changed");
    double* p = params[i].p;
    const double* g = grads[i].p;
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < params[i].n; ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* z = logits.row(i);
    double* pi = p.row(i);
    double zmax = z[0];
    for (std::size_t j = 1; j < logits.cols; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      pi[j] = std::exp(z[j] - zmax);
      sum += pi[j];
    }
    for (std::size_t j = 0; j < logits.cols; ++j) pi[j] /= sum;
  }
  return p;
}

LossGrad weighted_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                const std::vector<double>& weights) {
  if (logits.rows == 0) throw std::invalid_argument("weighted_cross_entropy: empty batch");
  if (logits.rows != labels.size())
    throw std::invalid_argument("weighted_cross_entropy: batch size mismatch");
  if (weights.size() != logits.cols)
    throw std::invalid_argument("weighted_cross_entropy: weight count mismatch");

  LossGrad out;
  out.dlogits = Matrix(logits.rows, logits.cols);
  Matrix p = softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw std::invalid_argument("weighted_cross_entropy: label out of range");
    const double w = weights[static_cast<std::size_t>(y)];
    const double py = std::max(p(i, static_cast<std::size_t>(y)), 1e-300);
    out.loss += -w * std::log(py) * inv_n;
    double* d = out.dlogits.row(i);
    const double* pi = p.row(i);
    for (std::size_t j = 0; j < logits.cols; ++j) d[j] = w * pi[j] * inv_n;
    d[y] -= w * inv_n;
  }
  return out;
}

double nll(const std::vector<double>& probs, int label, double weight) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw std::invalid_argument("nll: label out of range");
  return -weight * std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-12));
}

std::vector<double> class_weights_from_labels(const std::vector<int>& labels,
                                              int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("class_weights: num_classes must be >= 1");
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("class_weights: label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    w[c] = 1.0 / std::max(counts[c], 1.0);
  double mean = 0.0;
  for (double x : w) mean += x;
  mean /= static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return w;
}

void save_mlp(const Mlp& mlp, const std::string& path) {
  nlohmann::json j;
  j["format"] = "afabench-mlp";
  j["version"] = 1;
  j["mlp"] = mlp.to_json();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_mlp: cannot open " + path);
  f << j.dump();
}

Mlp load_mlp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_mlp: cannot open " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "afabench-mlp")
    throw std::runtime_error("load_mlp: unexpected format in " + path);
  return Mlp::from_json(j.at("mlp"));
}

std::uint64_t mlp_fingerprint(const Mlp& mlp) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& l : mlp.layers()) {
    h = fingerprint(l.w, h);
    h = fnv1a(l.b.data(), l.b.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace afa
