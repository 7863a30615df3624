#include "afa/greedy.hpp"

#include <algorithm>
#include <cmath>

namespace afa {

int greedy_select(const CmiScores& scores) {
  int best = -1;
  double best_score = 0.0;
  for (std::size_t i = 0; i < scores.scores.size(); ++i) {
    const double s = scores.scores[i];
    if (s == kObservedSentinel) continue;
    if (best < 0 || s > best_score) {
      best = static_cast<int>(i);
      best_score = s;
    }
  }
  if (best < 0) throw std::logic_error("greedy_select: no unobserved feature");
  return best;
}

namespace {

double kl_divergence(const double* p, const double* q, std::size_t n) {
  double kl = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double pj = std::max(p[j], 1e-12);
    kl += pj * (std::log(pj) - std::log(std::max(q[j], 1e-12)));
  }
  return kl;
}

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), src.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(src.row(idx[i]), src.row(idx[i]) + src.cols, out.row(i));
  return out;
}

}  // namespace

CmiScores eddi_cmi(const Pvae& pvae, const ProbModel& predictor, const AcquisitionState& state,
                   int mc_samples, std::uint64_t seed) {
  if (mc_samples < 1) throw std::invalid_argument("eddi_cmi: mc_samples must be >= 1");
  const std::size_t d = state.n_features();
  const std::size_t L = pvae.config().latent_dim;
  Rng rng(seed);

  Matrix values(1, d), mask(1, d);
  std::copy(state.values.begin(), state.values.end(), values.row(0));
  std::copy(state.mask.begin(), state.mask.end(), mask.row(0));
  Matrix mu, logvar;
  pvae.encode(values, mask, mu, logvar);

  Matrix z(static_cast<std::size_t>(mc_samples), L);
  for (std::size_t s = 0; s < z.rows; ++s)
    for (std::size_t l = 0; l < L; ++l)
      z(s, l) = mu(0, l) + std::exp(0.5 * logvar(0, l)) * rng.normal();
  Matrix dec_mean, dec_sd;
  pvae.decode(z, dec_mean, dec_sd);

  const std::vector<double> p_base = predictor.predict(state.masked_input());

  std::vector<std::size_t> unobserved;
  for (std::size_t i = 0; i < d; ++i)
    if (state.mask[i] == 0.0) unobserved.push_back(i);

  CmiScores out;
  out.scores.assign(d, kObservedSentinel);
  if (unobserved.empty()) return out;

  const std::size_t S = static_cast<std::size_t>(mc_samples);
  Matrix probe_values(unobserved.size() * S, d);
  Matrix probe_mask(unobserved.size() * S, d);
  for (std::size_t ui = 0; ui < unobserved.size(); ++ui) {
    const std::size_t i = unobserved[ui];
    for (std::size_t s = 0; s < S; ++s) {
      double* vr = probe_values.row(ui * S + s);
      double* mr = probe_mask.row(ui * S + s);
      std::copy(state.values.begin(), state.values.end(), vr);
      std::copy(state.mask.begin(), state.mask.end(), mr);
      vr[i] = dec_mean(s, i) + dec_sd(s, i) * rng.normal();
      mr[i] = 1.0;
    }
  }
  const Matrix probs = predictor.predict_batch(probe_values, probe_mask);
  for (std::size_t ui = 0; ui < unobserved.size(); ++ui) {
    double acc = 0.0;
    for (std::size_t s = 0; s < S; ++s)
      acc += kl_divergence(probs.row(ui * S + s), p_base.data(), probs.cols);
    out.scores[unobserved[ui]] = acc / static_cast<double>(S);
  }
  return out;
}

int EddiPolicy::select(const AcquisitionState& s, Rng&) {
  const std::uint64_t state_seed =
      seed_ ^ (s.instance * 1000003ull + static_cast<std::uint64_t>(s.step) * 7919ull);
  return greedy_select(eddi_cmi(pvae_, *predictor_, s, mc_samples_, state_seed));
}

// ---------------------------------------------------------------------------
// GDFS

std::vector<double> gdfs_temperature_stages() {
  std::vector<double> stages;
  for (int i = 0; i < 5; ++i) stages.push_back(std::pow(10.0, -static_cast<double>(i) / 4.0));
  return stages;
}

namespace {

Matrix concat_vm(const Matrix& values, const Matrix& mask) {
  Matrix x(values.rows, 2 * values.cols);
  for (std::size_t i = 0; i < values.rows; ++i) {
    double* r = x.row(i);
    std::copy(values.row(i), values.row(i) + values.cols, r);
    std::copy(mask.row(i), mask.row(i) + mask.cols, r + values.cols);
  }
  return x;
}

Matrix masked_values(const Matrix& x, const Matrix& m) {
  Matrix v = x;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] *= m.data[i];
  return v;
}

struct UnrollStep {
  MlpTape sel_tape;
  MlpTape pred_tape;
  Matrix y;        // relaxed one-hot
  Matrix mask_in;  // mask before this step
  Matrix dlogits;  // CE gradient at this step
};

// Hard-selection validation rollout; returns mean cross-entropy over steps.
double gdfs_val_loss(const Mlp& selector, const MaskedClassifier& predictor, const Matrix& x,
                     const std::vector<int>& labels, const std::vector<double>& weights,
                     std::size_t steps) {
  const std::size_t n = x.rows, d = x.cols;
  Matrix m(n, d, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix logits = selector.forward(concat_vm(masked_values(x, m), m));
    for (std::size_t i = 0; i < n; ++i) {
      const double* li = logits.row(i);
      std::size_t arg = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d; ++j) {
        if (m(i, j) > 0.5) continue;
        if (li[j] > best) {
          best = li[j];
          arg = j;
        }
      }
      m(i, arg) = 1.0;
    }
    const Matrix plogits = predictor.logits_batch(masked_values(x, m), m);
    total += weighted_cross_entropy(plogits, labels, weights).loss;
  }
  return total / static_cast<double>(steps);
}

}  // namespace

GdfsModel train_gdfs(const DatasetBundle& data, const GreedyTrainConfig& cfg,
                     std::uint64_t seed) {
  const std::size_t d = data.n_features;
  const std::size_t n = data.train.x.rows;
  const std::size_t T = std::min(cfg.unroll_steps, d);

  Rng rng(seed);
  Rng init_rng = rng.fork(0), drop_rng = rng.fork(1), gumbel_rng = rng.fork(2),
      shuffle_rng = rng.fork(3);

  PretrainOptions popts;
  popts.hidden_dims = cfg.hidden_dims;
  popts.dropout_rate = cfg.dropout_rate;
  TrainConfig pre_cfg = cfg.train;
  pre_cfg.max_epochs = cfg.pretrain_epochs;

  GdfsModel model;
  model.predictor = train_masked_classifier(data, cfg.masking, pre_cfg, rng.fork(4).seed(), popts);

  MlpConfig scfg;
  scfg.input_dim = 2 * d;
  scfg.hidden_dims = cfg.hidden_dims;
  scfg.output_dim = d;
  scfg.dropout_rate = cfg.dropout_rate;
  Mlp selector(scfg, init_rng);

  const std::vector<double> weights = cfg.train.class_weights.empty()
                                          ? class_weights_from_labels(data.train.y, data.num_classes)
                                          : cfg.train.class_weights;

  Adam sel_opt(cfg.train.learning_rate), pred_opt(cfg.train.learning_rate);
  MlpGrads sel_grads = selector.make_grads();
  MlpGrads pred_grads = model.predictor.mlp().make_grads();
  auto sel_params = param_refs(selector);
  auto pred_params = param_refs(model.predictor.mlp());
  auto sel_grefs = param_refs(sel_grads);
  auto pred_grefs = param_refs(pred_grads);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (const double tau : gdfs_temperature_stages()) {
    std::vector<DenseLayer> best_sel = selector.layers();
    std::vector<DenseLayer> best_pred = model.predictor.mlp().layers();
    double best_val = gdfs_val_loss(selector, model.predictor, data.val.x, data.val.y, weights, T);
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.stage_epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < n; start += cfg.train.batch_size) {
        const std::size_t bs = std::min(cfg.train.batch_size, n - start);
        Matrix xb = gather_rows(data.train.x, {order.begin() + start, order.begin() + start + bs});
        std::vector<int> yb(bs);
        for (std::size_t i = 0; i < bs; ++i) yb[i] = data.train.y[order[start + i]];

        std::vector<UnrollStep> steps(T);
        Matrix m(bs, d, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
          UnrollStep& st = steps[t];
          st.mask_in = m;
          const Matrix logits =
              selector.forward(concat_vm(masked_values(xb, m), m), st.sel_tape, true, &drop_rng);
          // relaxed one-hot over unobserved features
          Matrix u(bs, d);
          for (std::size_t i = 0; i < bs; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const double illegal = m(i, j) > 0.5 ? -1e9 : 0.0;
              const double ug = std::min(std::max(gumbel_rng.uniform(), 1e-12), 1.0 - 1e-12);
              const double g = -std::log(-std::log(ug));
              u(i, j) = (logits(i, j) + illegal + g) / tau;
            }
          st.y = softmax(u);
          Matrix m_next(bs, d);
          for (std::size_t i = 0; i < m.size(); ++i)
            m_next.data[i] = m.data[i] + st.y.data[i] * (1.0 - m.data[i]);
          m = std::move(m_next);

          const Matrix plogits = model.predictor.mlp().forward(
              concat_vm(masked_values(xb, m), m), st.pred_tape, true, &drop_rng);
          LossGrad lg = weighted_cross_entropy(plogits, yb, weights);
          if (!std::isfinite(lg.loss))
            throw std::runtime_error("train_gdfs: non-finite loss");
          st.dlogits = std::move(lg.dlogits);
        }

        sel_grads.zero();
        pred_grads.zero();
        Matrix dm_next(bs, d, 0.0);
        for (std::size_t t = T; t-- > 0;) {
          UnrollStep& st = steps[t];
          const Matrix dpred_in =
              model.predictor.mlp().backward(st.pred_tape, st.dlogits, pred_grads);
          Matrix dm_after(bs, d);
          for (std::size_t i = 0; i < bs; ++i) {
            const double* dp = dpred_in.row(i);
            const double* xi = xb.row(i);
            double* da = dm_after.row(i);
            const double* dn = dm_next.row(i);
            for (std::size_t j = 0; j < d; ++j)
              da[j] = dp[j] * xi[j] + dp[d + j] + dn[j];
          }
          // m' = m + y (1 - m)
          Matrix dy(bs, d), dm(bs, d);
          for (std::size_t i = 0; i < dm.size(); ++i) {
            dy.data[i] = dm_after.data[i] * (1.0 - st.mask_in.data[i]);
            dm.data[i] = dm_after.data[i] * (1.0 - st.y.data[i]);
          }
          // softmax((logits+g)/tau) backward
          Matrix dlog(bs, d);
          for (std::size_t i = 0; i < bs; ++i) {
            const double* yi = st.y.row(i);
            const double* dyi = dy.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += yi[j] * dyi[j];
            double* dl = dlog.row(i);
            for (std::size_t j = 0; j < d; ++j) dl[j] = yi[j] * (dyi[j] - dot) / tau;
          }
          const Matrix dsel_in = selector.backward(st.sel_tape, dlog, sel_grads);
          for (std::size_t i = 0; i < bs; ++i) {
            const double* ds = dsel_in.row(i);
            const double* xi = xb.row(i);
            double* dmr = dm.row(i);
            for (std::size_t j = 0; j < d; ++j) dmr[j] += ds[j] * xi[j] + ds[d + j];
          }
          dm_next = std::move(dm);
        }
        sel_opt.step(sel_params, sel_grefs);
        pred_opt.step(pred_params, pred_grefs);
      }

      const double val =
          gdfs_val_loss(selector, model.predictor, data.val.x, data.val.y, weights, T);
      if (val < best_val) {
        best_val = val;
        best_sel = selector.layers();
        best_pred = model.predictor.mlp().layers();
        since_best = 0;
      } else if (++since_best > cfg.stage_patience) {
        break;
      }
    }
    selector.layers() = best_sel;
    model.predictor.mlp().layers() = best_pred;
  }

  model.selector = std::move(selector);
  return model;
}

CmiScores GdfsModel::scores(const AcquisitionState& s) const {
  Matrix values(1, s.n_features()), mask(1, s.n_features());
  std::copy(s.values.begin(), s.values.end(), values.row(0));
  std::copy(s.mask.begin(), s.mask.end(), mask.row(0));
  const Matrix logits = selector.forward(concat_vm(values, mask));
  CmiScores out;
  out.scores.assign(s.n_features(), kObservedSentinel);
  for (std::size_t j = 0; j < s.n_features(); ++j)
    if (s.mask[j] == 0.0) out.scores[j] = logits(0, j);
  return out;
}

nlohmann::json GdfsModel::to_json() const {
  return {{"selector", selector.to_json()}, {"predictor", predictor.to_json()}};
}

GdfsModel GdfsModel::from_json(const nlohmann::json& j) {
  GdfsModel m;
  m.selector = Mlp::from_json(j.at("selector"));
  m.predictor = MaskedClassifier::from_json(j.at("predictor"));
  return m;
}

// ---------------------------------------------------------------------------
// DIME

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Greedy value-net rollout accuracy on a split.
double dime_val_accuracy(const Mlp& value_net, const MaskedClassifier& predictor,
                         const Matrix& x, const std::vector<int>& labels, std::size_t steps) {
  const std::size_t n = x.rows, d = x.cols;
  Matrix m(n, d, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix raw = value_net.forward(concat_vm(masked_values(x, m), m));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d; ++j) {
        if (m(i, j) > 0.5) continue;
        if (raw(i, j) > best) {
          best = raw(i, j);
          arg = j;
        }
      }
      m(i, arg) = 1.0;
    }
  }
  const Matrix probs = predictor.predict_batch(masked_values(x, m), m);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = probs.row(i);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (r[j] > r[arg]) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// Regression quality of the value net on a fixed masked view of a split:
// squared error between the predicted gain of the greedy choice and the
// realized cross-entropy reduction.
double dime_val_value_loss(const Mlp& value_net, const MaskedClassifier& predictor,
                           const Matrix& x, const std::vector<int>& labels,
                           const Matrix& mask) {
  const std::size_t n = x.rows, d = x.cols;
  const Matrix raw = value_net.forward(concat_vm(masked_values(x, mask), mask));
  const Matrix p_before = predictor.predict_batch(masked_values(x, mask), mask);
  Matrix m_after = mask;
  std::vector<std::size_t> chosen(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = d;
    for (std::size_t j = 0; j < d; ++j) {
      if (mask(i, j) != 0.0) continue;
      if (arg == d || raw(i, j) > raw(i, arg)) arg = j;
    }
    if (arg == d) arg = 0;  // fully observed row
    chosen[i] = arg;
    m_after(i, arg) = 1.0;
  }
  const Matrix p_after = predictor.predict_batch(masked_values(x, m_after), m_after);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const double target = -std::log(std::max(p_before(i, y), 1e-12)) +
                          std::log(std::max(p_after(i, y), 1e-12));
    const double pred = softplus(raw(i, chosen[i]));
    loss += (pred - target) * (pred - target) / static_cast<double>(n);
  }
  return loss;
}

}  // namespace

DimeModel train_dime(const DatasetBundle& data, const GreedyTrainConfig& cfg,
                     std::uint64_t seed) {
  const std::size_t d = data.n_features;
  const std::size_t n = data.train.x.rows;
  const std::size_t val_steps = std::min(cfg.unroll_steps, d);

  Rng rng(seed);
  Rng init_rng = rng.fork(0), drop_rng = rng.fork(1), mask_rng = rng.fork(2),
      shuffle_rng = rng.fork(3), eps_rng = rng.fork(5);

  PretrainOptions popts;
  popts.hidden_dims = cfg.hidden_dims;
  popts.dropout_rate = cfg.dropout_rate;
  TrainConfig pre_cfg = cfg.train;
  pre_cfg.max_epochs = cfg.pretrain_epochs;

  DimeModel model;
  model.predictor = train_masked_classifier(data, cfg.masking, pre_cfg, rng.fork(4).seed(), popts);

  MlpConfig vcfg;
  vcfg.input_dim = 2 * d;
  vcfg.hidden_dims = cfg.hidden_dims;
  vcfg.output_dim = d;
  vcfg.dropout_rate = cfg.dropout_rate;
  Mlp value_net(vcfg, init_rng);

  const std::vector<double> weights = cfg.train.class_weights.empty()
                                          ? class_weights_from_labels(data.train.y, data.num_classes)
                                          : cfg.train.class_weights;

  Adam val_opt(cfg.train.learning_rate), pred_opt(cfg.train.learning_rate);
  MlpGrads val_grads = value_net.make_grads();
  MlpGrads pred_grads = model.predictor.mlp().make_grads();
  auto val_params = param_refs(value_net);
  auto pred_params = param_refs(model.predictor.mlp());
  auto val_grefs = param_refs(val_grads);
  auto pred_grefs = param_refs(pred_grads);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  double epsilon = cfg.initial_epsilon;
  int decays = 0;
  double best_acc = -1.0;
  double best_value_loss = std::numeric_limits<double>::infinity();
  std::vector<DenseLayer> best_val_net = value_net.layers();
  std::size_t stall = 0;
  Rng valmask_rng = rng.fork(6);
  const Matrix val_mask = sample_mask(data.val.x.rows, d, {0.5, 0.5}, valmask_rng);

  // the predictor early-stops on its own validation loss; the value net keeps
  // regressing against the frozen best predictor afterwards
  bool predictor_frozen = false;
  double best_pred_loss = std::numeric_limits<double>::infinity();
  std::vector<DenseLayer> best_pred = model.predictor.mlp().layers();
  std::size_t pred_stall = 0;
  auto predictor_val_loss = [&]() {
    Matrix masked_val(data.val.x.rows, d);
    for (std::size_t i = 0; i < masked_val.size(); ++i)
      masked_val.data[i] = data.val.x.data[i] * val_mask.data[i];
    const Matrix logits =
        model.predictor.mlp().forward(concat_vm(masked_val, val_mask));
    return weighted_cross_entropy(logits, data.val.y, weights).loss;
  };

  for (std::size_t epoch = 0; epoch < cfg.train.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.train.batch_size) {
      const std::size_t bs = std::min(cfg.train.batch_size, n - start);
      Matrix xb = gather_rows(data.train.x, {order.begin() + start, order.begin() + start + bs});
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) yb[i] = data.train.y[order[start + i]];

      const Matrix m = sample_mask(bs, d, cfg.masking, mask_rng);
      MlpTape pred_tape_before;
      const Matrix logits_before = model.predictor.mlp().forward(
          concat_vm(masked_values(xb, m), m), pred_tape_before, true, &drop_rng);
      // regression targets come from deterministic forwards
      const Matrix p_before =
          softmax(model.predictor.mlp().forward(concat_vm(masked_values(xb, m), m)));

      MlpTape val_tape;
      const Matrix raw =
          value_net.forward(concat_vm(masked_values(xb, m), m), val_tape, true, &drop_rng);

      // epsilon-greedy choice of the next feature per row
      std::vector<std::size_t> chosen(bs);
      Matrix m_after = m;
      for (std::size_t i = 0; i < bs; ++i) {
        std::vector<std::size_t> legal;
        for (std::size_t j = 0; j < d; ++j)
          if (m(i, j) == 0.0) legal.push_back(j);
        if (legal.empty()) {
          // fully observed row: re-hide one feature so a step always exists
          const std::size_t j = eps_rng.uniform_index(d);
          m_after(i, j) = 0.0;
          legal.push_back(j);
        }
        std::size_t pick;
        if (eps_rng.uniform() < epsilon) {
          pick = legal[eps_rng.uniform_index(legal.size())];
        } else {
          pick = legal[0];
          for (const std::size_t j : legal)
            if (raw(i, j) > raw(i, pick)) pick = j;
        }
        chosen[i] = pick;
        m_after(i, pick) = 1.0;
      }

      MlpTape pred_tape_after;
      const Matrix logits_after = model.predictor.mlp().forward(
          concat_vm(masked_values(xb, m_after), m_after), pred_tape_after, true, &drop_rng);
      const Matrix p_after = softmax(
          model.predictor.mlp().forward(concat_vm(masked_values(xb, m_after), m_after)));

      // value regression on the realized cross-entropy reduction
      val_grads.zero();
      Matrix draw(bs, d, 0.0);
      for (std::size_t i = 0; i < bs; ++i) {
        const auto y = static_cast<std::size_t>(yb[i]);
        const double before = -std::log(std::max(p_before(i, y), 1e-12));
        const double after = -std::log(std::max(p_after(i, y), 1e-12));
        const double target = before - after;
        const double score = softplus(raw(i, chosen[i]));
        draw(i, chosen[i]) =
            2.0 * (score - target) * sigmoid(raw(i, chosen[i])) / static_cast<double>(bs);
      }
      value_net.backward(val_tape, draw, val_grads);
      val_opt.step(val_params, val_grefs);

      // predictor update on both masked views, until it early-stops
      if (!predictor_frozen) {
        pred_grads.zero();
        LossGrad lg_before = weighted_cross_entropy(logits_before, yb, weights);
        LossGrad lg_after = weighted_cross_entropy(logits_after, yb, weights);
        if (!std::isfinite(lg_before.loss) || !std::isfinite(lg_after.loss))
          throw std::runtime_error("train_dime: non-finite loss");
        for (auto& v : lg_before.dlogits.data) v *= 0.5;
        for (auto& v : lg_after.dlogits.data) v *= 0.5;
        model.predictor.mlp().backward(pred_tape_before, lg_before.dlogits, pred_grads);
        model.predictor.mlp().backward(pred_tape_after, lg_after.dlogits, pred_grads);
        pred_opt.step(pred_params, pred_grefs);
      }
    }

    if (!predictor_frozen) {
      const double pl = predictor_val_loss();
      if (pl < best_pred_loss) {
        best_pred_loss = pl;
        best_pred = model.predictor.mlp().layers();
        pred_stall = 0;
      } else if (++pred_stall > cfg.train.early_stop_patience) {
        model.predictor.mlp().layers() = best_pred;
        predictor_frozen = true;
      }
    }

    const double acc =
        dime_val_accuracy(value_net, model.predictor, data.val.x, data.val.y, val_steps);
    const double vloss =
        dime_val_value_loss(value_net, model.predictor, data.val.x, data.val.y, val_mask);
    // checkpoint the value net on rollout accuracy, regression quality
    // breaking near-ties
    const bool improved = acc > best_acc + 1e-12;
    if (improved || (acc >= best_acc - 0.02 && vloss < best_value_loss)) {
      best_acc = std::max(best_acc, acc);
      best_value_loss = vloss;
      best_val_net = value_net.layers();
    }
    // epsilon decays when the accuracy signal stalls
    if (improved) {
      stall = 0;
    } else if (++stall >= 5 && decays < 10) {
      epsilon *= 0.2;
      ++decays;
      stall = 0;
    }
  }
  value_net.layers() = std::move(best_val_net);
  model.predictor.mlp().layers() = std::move(best_pred);
  model.value_net = std::move(value_net);
  return model;
}

CmiScores DimeModel::scores(const AcquisitionState& s) const {
  Matrix values(1, s.n_features()), mask(1, s.n_features());
  std::copy(s.values.begin(), s.values.end(), values.row(0));
  std::copy(s.mask.begin(), s.mask.end(), mask.row(0));
  const Matrix raw = value_net.forward(concat_vm(values, mask));
  CmiScores out;
  out.scores.assign(s.n_features(), kObservedSentinel);
  for (std::size_t j = 0; j < s.n_features(); ++j)
    if (s.mask[j] == 0.0) out.scores[j] = softplus(raw(0, j));
  return out;
}

nlohmann::json DimeModel::to_json() const {
  return {{"value_net", value_net.to_json()}, {"predictor", predictor.to_json()}};
}

DimeModel DimeModel::from_json(const nlohmann::json& j) {
  DimeModel m;
  m.value_net = Mlp::from_json(j.at("value_net"));
  m.predictor = MaskedClassifier::from_json(j.at("predictor"));
  return m;
}

}  // namespace afa
