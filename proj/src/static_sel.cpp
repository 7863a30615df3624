#include "afa/static_sel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace afa {

nlohmann::json FeatureRanking::to_json() const {
  return {{"order", order}, {"importance", importance}, {"method", method}};
}

FeatureRanking FeatureRanking::from_json(const nlohmann::json& j) {
  FeatureRanking r;
  r.order = j.at("order").get<std::vector<int>>();
  r.importance = j.at("importance").get<std::vector<double>>();
  r.method = j.at("method").get<std::string>();
  return r;
}

nlohmann::json StaticSelection::to_json() const {
  return {{"selected", selected}, {"collapse_warning", collapse_warning}};
}

StaticSelection StaticSelection::from_json(const nlohmann::json& j) {
  StaticSelection s;
  s.selected = j.at("selected").get<std::vector<int>>();
  s.collapse_warning = j.value("collapse_warning", false);
  return s;
}

namespace {

double full_mask_accuracy(const ProbModel& model, const Matrix& values,
                          const std::vector<int>& labels) {
  const Matrix mask(values.rows, values.cols, 1.0);
  const Matrix probs = model.predict_batch(values, mask);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const double* r = probs.row(i);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (r[j] > r[arg]) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows);
}

}  // namespace

FeatureRanking permutation_importance(const ProbModel& model, const DatasetBundle& data,
                                      std::uint64_t seed, int repeats) {
  if (data.val.x.rows == 0)
    throw std::invalid_argument("permutation_importance: validation split empty");
  const std::size_t d = data.n_features;
  const double baseline = full_mask_accuracy(model, data.val.x, data.val.y);

  FeatureRanking ranking;
  ranking.importance.assign(d, 0.0);
  Rng rng(seed);
  for (std::size_t f = 0; f < d; ++f) {
    double drop = 0.0;
    for (int rep = 0; rep < repeats; ++rep) {
      Matrix perturbed = data.val.x;
      for (std::size_t i = 0; i < perturbed.rows; ++i)
        perturbed(i, f) = data.train.x(rng.uniform_index(data.train.x.rows), f);
      drop += baseline - full_mask_accuracy(model, perturbed, data.val.y);
    }
    ranking.importance[f] = drop / static_cast<double>(repeats);
  }
  ranking.order.resize(d);
  for (std::size_t f = 0; f < d; ++f) ranking.order[f] = static_cast<int>(f);
  std::stable_sort(ranking.order.begin(), ranking.order.end(), [&](int a, int b) {
    return ranking.importance[static_cast<std::size_t>(a)] >
           ranking.importance[static_cast<std::size_t>(b)];
  });
  return ranking;
}

namespace {

Matrix select_inputs_soft(const Matrix& xb, const Matrix& heads_y, std::size_t b_max) {
  // heads_y: (bs*b_max) x d relaxed one-hots, row-major by (row, head)
  Matrix s(xb.rows, b_max);
  for (std::size_t i = 0; i < xb.rows; ++i)
    for (std::size_t h = 0; h < b_max; ++h) {
      double acc = 0.0;
      const double* y = heads_y.row(i * b_max + h);
      for (std::size_t j = 0; j < xb.cols; ++j) acc += y[j] * xb(i, j);
      s(i, h) = acc;
    }
  return s;
}

double cae_val_loss(const Matrix& alpha, const Mlp& predictor, const Matrix& x,
                    const std::vector<int>& labels, const std::vector<double>& weights) {
  const std::size_t b_max = alpha.rows;
  Matrix s(x.rows, b_max);
  for (std::size_t h = 0; h < b_max; ++h) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < alpha.cols; ++j)
      if (alpha(h, j) > alpha(h, arg)) arg = j;
    for (std::size_t i = 0; i < x.rows; ++i) s(i, h) = x(i, arg);
  }
  return weighted_cross_entropy(predictor.forward(s), labels, weights).loss;
}

}  // namespace

StaticSelection train_cae(const DatasetBundle& data, std::size_t b_max, const CaeConfig& cfg,
                          std::uint64_t seed) {
  const std::size_t d = data.n_features;
  const std::size_t n = data.train.x.rows;
  if (b_max < 1 || b_max > d) throw std::invalid_argument("train_cae: b_max must be in [1, d]");

  Rng rng(seed);
  Rng init_rng = rng.fork(0), gumbel_rng = rng.fork(1), shuffle_rng = rng.fork(2);

  Matrix alpha(b_max, d);
  for (auto& v : alpha.data) v = init_rng.uniform(-0.01, 0.01);

  MlpConfig pcfg;
  pcfg.input_dim = b_max;
  pcfg.hidden_dims = cfg.hidden_dims;
  pcfg.output_dim = static_cast<std::size_t>(data.num_classes);
  Mlp predictor(pcfg, init_rng);

  const std::vector<double> weights = cfg.train.class_weights.empty()
                                          ? class_weights_from_labels(data.train.y, data.num_classes)
                                          : cfg.train.class_weights;

  Adam alpha_opt(cfg.train.learning_rate), pred_opt(cfg.train.learning_rate);
  Matrix alpha_grads(b_max, d);
  MlpGrads pred_grads = predictor.make_grads();
  std::vector<ParamRef> alpha_params = {{alpha.data.data(), alpha.data.size()}};
  std::vector<ParamRef> alpha_grefs = {{alpha_grads.data.data(), alpha_grads.data.size()}};
  auto pred_params = param_refs(predictor);
  auto pred_grefs = param_refs(pred_grads);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Matrix best_alpha = alpha;
  std::vector<DenseLayer> best_pred = predictor.layers();
  double best_val = cae_val_loss(alpha, predictor, data.val.x, data.val.y, weights);
  std::size_t since_best = 0;

  const std::size_t epochs = cfg.train.max_epochs;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double frac = epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(epochs - 1)
                                   : 1.0;
    const double tau = cfg.temp_start * std::pow(cfg.temp_end / cfg.temp_start, frac);

    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.train.batch_size) {
      const std::size_t bs = std::min(cfg.train.batch_size, n - start);
      Matrix xb(bs, d);
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        std::copy(data.train.x.row(order[start + i]), data.train.x.row(order[start + i]) + d,
                  xb.row(i));
        yb[i] = data.train.y[order[start + i]];
      }

      // concrete relaxation per (row, head)
      Matrix u(bs * b_max, d);
      for (std::size_t i = 0; i < bs; ++i)
        for (std::size_t h = 0; h < b_max; ++h) {
          double* ur = u.row(i * b_max + h);
          for (std::size_t j = 0; j < d; ++j) {
            const double ug = std::min(std::max(gumbel_rng.uniform(), 1e-12), 1.0 - 1e-12);
            ur[j] = (alpha(h, j) - std::log(-std::log(ug))) / tau;
          }
        }
      const Matrix y = softmax(u);
      const Matrix s = select_inputs_soft(xb, y, b_max);

      MlpTape tape;
      const Matrix logits = predictor.forward(s, tape);
      LossGrad lg = weighted_cross_entropy(logits, yb, weights);
      if (!std::isfinite(lg.loss)) throw std::runtime_error("train_cae: non-finite loss");

      pred_grads.zero();
      const Matrix ds = predictor.backward(tape, lg.dlogits, pred_grads);

      alpha_grads.fill(0.0);
      for (std::size_t i = 0; i < bs; ++i)
        for (std::size_t h = 0; h < b_max; ++h) {
          const double* yr = y.row(i * b_max + h);
          const double dsh = ds(i, h);
          // dy_j = dsh * x_j ; softmax backward / tau into alpha
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += yr[j] * dsh * xb(i, j);
          for (std::size_t j = 0; j < d; ++j)
            alpha_grads(h, j) += yr[j] * (dsh * xb(i, j) - dot) / tau;
        }
      alpha_opt.step(alpha_params, alpha_grefs);
      pred_opt.step(pred_params, pred_grefs);
    }

    const double val = cae_val_loss(alpha, predictor, data.val.x, data.val.y, weights);
    if (val < best_val) {
      best_val = val;
      best_alpha = alpha;
      best_pred = predictor.layers();
      since_best = 0;
    } else if (++since_best > cfg.train.early_stop_patience) {
      break;
    }
  }
  alpha = std::move(best_alpha);

  // argmax per head; duplicate heads fall through to their next-best feature
  StaticSelection sel;
  std::vector<bool> taken(d, false);
  for (std::size_t h = 0; h < b_max; ++h) {
    std::vector<std::size_t> by_logit(d);
    for (std::size_t j = 0; j < d; ++j) by_logit[j] = j;
    std::stable_sort(by_logit.begin(), by_logit.end(),
                     [&](std::size_t a, std::size_t b) { return alpha(h, a) > alpha(h, b); });
    std::size_t pick = by_logit[0];
    if (taken[pick]) {
      sel.collapse_warning = true;
      for (const std::size_t j : by_logit)
        if (!taken[j]) {
          pick = j;
          break;
        }
    }
    taken[pick] = true;
    sel.selected.push_back(static_cast<int>(pick));
  }
  std::sort(sel.selected.begin(), sel.selected.end());
  return sel;
}

MaskedClassifier train_subset_predictor(const DatasetBundle& data,
                                        const std::vector<int>& selected,
                                        const TrainConfig& cfg, std::uint64_t seed) {
  PretrainOptions opts;
  opts.restrict_features = selected;
  return train_masked_classifier(data, {0.0, 0.9}, cfg, seed, opts);
}

std::vector<int> static_eval_order(const std::string& method, const FeatureRanking* ranking,
                                   const StaticSelection* selection, int b, Rng& rng) {
  if (b < 1) throw std::invalid_argument("static_eval_order: b must be >= 1");
  if (method == "pts") {
    if (!ranking || static_cast<std::size_t>(b) > ranking->order.size())
      throw std::invalid_argument("static_eval_order: budget exceeds ranking");
    return {ranking->order.begin(), ranking->order.begin() + b};
  }
  if (method == "caes") {
    if (!selection || static_cast<std::size_t>(b) > selection->selected.size())
      throw std::invalid_argument("static_eval_order: budget exceeds selected set");
    std::vector<int> order = selection->selected;
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(b));
    return order;
  }
  throw std::invalid_argument("static_eval_order: unknown method " + method);
}

StaticOrderPolicy::StaticOrderPolicy(std::string method, FeatureRanking ranking, int budget)
    : method_(std::move(method)), ranking_(std::move(ranking)), budget_(budget) {
  Rng unused(0);
  current_order_ = static_eval_order(method_, &ranking_, nullptr, budget_, unused);
}

StaticOrderPolicy::StaticOrderPolicy(std::string method, StaticSelection selection, int budget,
                                     std::uint64_t seed)
    : method_(std::move(method)), selection_(std::move(selection)), budget_(budget),
      seed_(seed) {}

void StaticOrderPolicy::begin_instance(std::size_t instance, Rng&) {
  if (method_ == "caes") {
    Rng rng = Rng(seed_).fork(instance);
    current_order_ = static_eval_order(method_, nullptr, &selection_, budget_, rng);
  }
}

int StaticOrderPolicy::select(const AcquisitionState& s, Rng&) {
  for (const int i : current_order_)
    if (!s.is_observed(i)) return i;
  // order exhausted (budget larger than the static set); fall back to lowest index
  for (std::size_t j = 0; j < s.mask.size(); ++j)
    if (s.mask[j] == 0.0) return static_cast<int>(j);
  throw std::logic_error("StaticOrderPolicy: no unobserved feature");
}

}  // namespace afa
