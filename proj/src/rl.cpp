#include "afa/rl.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>

namespace afa {

std::vector<double> lambda_return(const std::vector<double>& rewards,
                                  const std::vector<double>& bootstrap, double lambda) {
  if (rewards.size() != bootstrap.size())
    throw std::invalid_argument("lambda_return: length mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda_return: lambda must be in [0,1]");
  const std::size_t T = rewards.size();
  std::vector<double> g(T, 0.0);
  if (T == 0) return g;
  g[T - 1] = rewards[T - 1] + bootstrap[T - 1];
  for (std::size_t t = T - 1; t-- > 0;)
    g[t] = rewards[t] + (1.0 - lambda) * bootstrap[t] + lambda * g[t + 1];
  return g;
}

// ---------------------------------------------------------------------------
// SetEncoder

void SetEncoderGrads::zero() {
  read.zero();
  proc.w.fill(0.0);
  std::fill(proc.b.begin(), proc.b.end(), 0.0);
  write.zero();
}

SetEncoder::SetEncoder(const SetEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d < 1) throw std::invalid_argument("SetEncoder: d must be >= 1");
  MlpConfig rcfg;
  rcfg.input_dim = cfg.d + 1;
  rcfg.hidden_dims = cfg.read_hidden;
  rcfg.output_dim = cfg.embed_dim;
  read_ = Mlp(rcfg, rng);
  proc_.w = Matrix(2 * cfg.embed_dim, cfg.embed_dim);
  proc_.b.assign(cfg.embed_dim, 0.0);
  const double limit = std::sqrt(6.0 / static_cast<double>(3 * cfg.embed_dim));
  for (auto& v : proc_.w.data) v = rng.uniform(-limit, limit);
  MlpConfig wcfg;
  wcfg.input_dim = cfg.embed_dim;
  wcfg.hidden_dims = cfg.write_hidden;
  wcfg.output_dim = cfg.out_dim;
  write_ = Mlp(wcfg, rng);
}

std::vector<double> SetEncoder::forward(const AcquisitionState& s) const {
  SetEncoderTape tape;
  return forward(s, tape);
}

std::vector<double> SetEncoder::forward(const AcquisitionState& s, SetEncoderTape& tape) const {
  const std::size_t E = cfg_.embed_dim;
  tape.indices = s.observed;
  const std::size_t m = tape.indices.size();

  tape.elems = Matrix(m, cfg_.d + 1);
  for (std::size_t j = 0; j < m; ++j) {
    double* r = tape.elems.row(j);
    const auto idx = static_cast<std::size_t>(tape.indices[j]);
    r[idx] = 1.0;
    r[cfg_.d] = s.values[idx];
  }
  tape.e = m > 0 ? read_.forward(tape.elems, tape.read_tape) : Matrix(0, E);

  tape.q.assign(1, std::vector<double>(E, 0.0));
  tape.attn.clear();
  tape.r.clear();
  for (int t = 0; t < cfg_.process_steps; ++t) {
    const std::vector<double>& q = tape.q.back();
    std::vector<double> attn(m, 0.0), r(E, 0.0);
    if (m > 0) {
      double smax = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < E; ++k) dot += tape.e(j, k) * q[k];
        attn[j] = dot;
        smax = std::max(smax, dot);
      }
      double sum = 0.0;
      for (auto& a : attn) {
        a = std::exp(a - smax);
        sum += a;
      }
      for (auto& a : attn) a /= sum;
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < E; ++k) r[k] += attn[j] * tape.e(j, k);
    }
    std::vector<double> qn(E, 0.0);
    for (std::size_t k = 0; k < E; ++k) {
      double z = proc_.b[k];
      for (std::size_t i = 0; i < E; ++i) z += proc_.w(i, k) * q[i];
      for (std::size_t i = 0; i < E; ++i) z += proc_.w(E + i, k) * r[i];
      qn[k] = std::tanh(z);
    }
    tape.attn.push_back(std::move(attn));
    tape.r.push_back(std::move(r));
    tape.q.push_back(std::move(qn));
  }

  Matrix qmat(1, E);
  std::copy(tape.q.back().begin(), tape.q.back().end(), qmat.row(0));
  const Matrix out = write_.forward(qmat, tape.write_tape);
  return {out.data.begin(), out.data.end()};
}

void SetEncoder::backward(const SetEncoderTape& tape, const std::vector<double>& dout,
                          SetEncoderGrads& grads) const {
  const std::size_t E = cfg_.embed_dim;
  const std::size_t m = tape.indices.size();

  Matrix dout_m(1, cfg_.out_dim);
  std::copy(dout.begin(), dout.end(), dout_m.row(0));
  const Matrix dq_mat = write_.backward(tape.write_tape, dout_m, grads.write);
  std::vector<double> dq(dq_mat.row(0), dq_mat.row(0) + E);

  Matrix de(m, E);
  for (int t = cfg_.process_steps; t-- > 0;) {
    const std::vector<double>& q_prev = tape.q[static_cast<std::size_t>(t)];
    const std::vector<double>& q_next = tape.q[static_cast<std::size_t>(t) + 1];
    const std::vector<double>& attn = tape.attn[static_cast<std::size_t>(t)];
    const std::vector<double>& r = tape.r[static_cast<std::size_t>(t)];

    std::vector<double> dpre(E);
    for (std::size_t k = 0; k < E; ++k) dpre[k] = dq[k] * (1.0 - q_next[k] * q_next[k]);

    std::vector<double> dq_prev(E, 0.0), dr(E, 0.0);
    for (std::size_t k = 0; k < E; ++k) {
      grads.proc.b[k] += dpre[k];
      for (std::size_t i = 0; i < E; ++i) {
        grads.proc.w(i, k) += q_prev[i] * dpre[k];
        grads.proc.w(E + i, k) += r[i] * dpre[k];
        dq_prev[i] += proc_.w(i, k) * dpre[k];
        dr[i] += proc_.w(E + i, k) * dpre[k];
      }
    }

    if (m > 0) {
      std::vector<double> da(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < E; ++k) dot += dr[k] * tape.e(j, k);
        da[j] = dot;
        for (std::size_t k = 0; k < E; ++k) de(j, k) += attn[j] * dr[k];
      }
      double adot = 0.0;
      for (std::size_t j = 0; j < m; ++j) adot += attn[j] * da[j];
      for (std::size_t j = 0; j < m; ++j) {
        const double ds = attn[j] * (da[j] - adot);
        for (std::size_t k = 0; k < E; ++k) {
          de(j, k) += ds * q_prev[k];
          dq_prev[k] += ds * tape.e(j, k);
        }
      }
    }
    dq = std::move(dq_prev);
  }
  if (m > 0) read_.backward(tape.read_tape, de, grads.read);
}

SetEncoderGrads SetEncoder::make_grads() const {
  SetEncoderGrads g;
  g.read = read_.make_grads();
  g.proc.w = Matrix(proc_.w.rows, proc_.w.cols);
  g.proc.b.assign(proc_.b.size(), 0.0);
  g.write = write_.make_grads();
  return g;
}

std::vector<ParamRef> SetEncoder::params() {
  std::vector<ParamRef> refs = param_refs(read_);
  refs.push_back({proc_.w.data.data(), proc_.w.data.size()});
  refs.push_back({proc_.b.data(), proc_.b.size()});
  const auto w = param_refs(write_);
  refs.insert(refs.end(), w.begin(), w.end());
  return refs;
}

nlohmann::json SetEncoder::to_json() const {
  nlohmann::json j;
  j["d"] = cfg_.d;
  j["embed_dim"] = cfg_.embed_dim;
  j["process_steps"] = cfg_.process_steps;
  j["out_dim"] = cfg_.out_dim;
  j["read"] = read_.to_json();
  j["write"] = write_.to_json();
  j["proc_w"] = proc_.w.data;
  j["proc_b"] = proc_.b;
  return j;
}

SetEncoder SetEncoder::from_json(const nlohmann::json& j) {
  SetEncoder s;
  s.cfg_.d = j.at("d").get<std::size_t>();
  s.cfg_.embed_dim = j.at("embed_dim").get<std::size_t>();
  s.cfg_.process_steps = j.at("process_steps").get<int>();
  s.cfg_.out_dim = j.at("out_dim").get<std::size_t>();
  s.read_ = Mlp::from_json(j.at("read"));
  s.write_ = Mlp::from_json(j.at("write"));
  s.proc_.w = Matrix(2 * s.cfg_.embed_dim, s.cfg_.embed_dim);
  s.proc_.w.data = j.at("proc_w").get<std::vector<double>>();
  s.proc_.b = j.at("proc_b").get<std::vector<double>>();
  return s;
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

int legal_argmax(const std::vector<double>& values, const AcquisitionState& s) {
  int best = -1;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (s.is_observed(static_cast<int>(j))) continue;
    if (best < 0 || values[j] > values[static_cast<std::size_t>(best)])
      best = static_cast<int>(j);
  }
  if (best < 0) throw std::logic_error("legal_argmax: no legal action");
  return best;
}

int random_legal(const AcquisitionState& s, Rng& rng) {
  std::vector<int> legal;
  for (std::size_t j = 0; j < s.mask.size(); ++j)
    if (s.mask[j] == 0.0) legal.push_back(static_cast<int>(j));
  if (legal.empty()) throw std::logic_error("random_legal: no legal action");
  return legal[rng.uniform_index(legal.size())];
}

double linear_epsilon(int iter, int n_batches, double eps_min) {
  const int half = std::max(1, n_batches / 2);
  if (iter >= half) return eps_min;
  return 1.0 - (1.0 - eps_min) * static_cast<double>(iter) / static_cast<double>(half);
}

void advance_state(AcquisitionState& s, const Matrix& x, int action) {
  s.values[static_cast<std::size_t>(action)] = x(s.instance, static_cast<std::size_t>(action));
  s.mask[static_cast<std::size_t>(action)] = 1.0;
  s.observed.push_back(action);
  s.step += 1;
}

double greedy_eval_accuracy(const std::function<int(const AcquisitionState&)>& act,
                            const TabularDataset& ds, int budget, const ProbModel& clf) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.x.rows; ++i) {
    AcquisitionState s;
    s.values.assign(ds.x.cols, 0.0);
    s.mask.assign(ds.x.cols, 0.0);
    s.budget = budget;
    s.instance = i;
    while (!s.done()) advance_state(s, ds.x, act(s));
    const auto probs = clf.predict(s.masked_input());
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.size(); ++j)
      if (probs[j] > probs[arg]) arg = j;
    if (static_cast<int>(arg) == ds.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.x.rows);
}

void polyak_update(const std::vector<ParamRef>& target, const std::vector<ParamRef>& online,
                   double tau) {
  for (std::size_t i = 0; i < target.size(); ++i)
    for (std::size_t k = 0; k < target[i].n; ++k)
      target[i].p[k] += tau * (online[i].p[k] - target[i].p[k]);
}

struct ClassifierTrainer {
  MaskedClassifier* clf;
  Adam opt;
  MlpGrads grads;
  std::vector<ParamRef> params, grefs;
  std::vector<double> weights;

  ClassifierTrainer(MaskedClassifier* c, double lr, std::vector<double> w)
      : clf(c), opt(lr), grads(c->mlp().make_grads()), weights(std::move(w)) {
    params = param_refs(clf->mlp());
    grefs = param_refs(grads);
  }

  void update(const Matrix& values, const Matrix& mask, const std::vector<int>& labels) {
    Matrix input(values.rows, 2 * values.cols);
    for (std::size_t i = 0; i < values.rows; ++i) {
      double* r = input.row(i);
      std::copy(values.row(i), values.row(i) + values.cols, r);
      std::copy(mask.row(i), mask.row(i) + mask.cols, r + values.cols);
    }
    MlpTape tape;
    const Matrix logits = clf->mlp().forward(input, tape);
    LossGrad lg = weighted_cross_entropy(logits, labels, weights);
    if (!std::isfinite(lg.loss)) throw std::runtime_error("classifier update: non-finite loss");
    grads.zero();
    clf->mlp().backward(tape, lg.dlogits, grads);
    opt.step(params, grefs);
  }
};

struct StoredEpisode {
  std::size_t row = 0;
  std::vector<int> actions;
  std::vector<double> rewards;
};

}  // namespace

// ---------------------------------------------------------------------------
// JAFA

std::vector<double> JafaModel::q_values(const AcquisitionState& s) const {
  const std::vector<double> out = encoder.forward(s);
  std::vector<double> q(q_head.b);
  for (std::size_t j = 0; j < q.size(); ++j)
    for (std::size_t i = 0; i < out.size(); ++i) q[j] += out[i] * q_head.w(i, j);
  return q;
}

nlohmann::json JafaModel::to_json() const {
  nlohmann::json j;
  j["encoder"] = encoder.to_json();
  j["q_head_w"] = q_head.w.data;
  j["q_head_rows"] = q_head.w.rows;
  j["q_head_cols"] = q_head.w.cols;
  j["q_head_b"] = q_head.b;
  j["classifier"] = classifier.to_json();
  return j;
}

JafaModel JafaModel::from_json(const nlohmann::json& j) {
  JafaModel m;
  m.encoder = SetEncoder::from_json(j.at("encoder"));
  m.q_head.w = Matrix(j.at("q_head_rows").get<std::size_t>(), j.at("q_head_cols").get<std::size_t>());
  m.q_head.w.data = j.at("q_head_w").get<std::vector<double>>();
  m.q_head.b = j.at("q_head_b").get<std::vector<double>>();
  m.classifier = MaskedClassifier::from_json(j.at("classifier"));
  return m;
}

int JafaPolicy::select(const AcquisitionState& s, Rng&) {
  return legal_argmax(model_.q_values(s), s);
}

namespace {

struct QNetRefs {
  SetEncoder* enc;
  DenseLayer* head;

  std::vector<double> q_values(const AcquisitionState& s) const {
    const std::vector<double> out = enc->forward(s);
    std::vector<double> q(head->b);
    for (std::size_t j = 0; j < q.size(); ++j)
      for (std::size_t i = 0; i < out.size(); ++i) q[j] += out[i] * head->w(i, j);
    return q;
  }

  std::vector<ParamRef> params() {
    auto refs = enc->params();
    refs.push_back({head->w.data.data(), head->w.data.size()});
    refs.push_back({head->b.data(), head->b.size()});
    return refs;
  }
};

}  // namespace

JafaModel train_jafa(const DatasetBundle& data, int budget, const RlConfig& cfg,
                     std::uint64_t seed, TrainCurve* curve) {
  if (budget < 1 || static_cast<std::size_t>(budget) > data.n_features)
    throw std::invalid_argument("train_jafa: budget must be in [1, d]");
  const std::size_t d = data.n_features;
  Rng rng(seed);
  Rng init_rng = rng.fork(0), act_rng = rng.fork(1), sample_rng = rng.fork(2);

  // builtin classifier, pretrained before the agent
  PretrainOptions copts;
  copts.hidden_dims = {32, 32};
  copts.dropout_rate = 0.1;
  TrainConfig pre_cfg;
  pre_cfg.max_epochs = cfg.pretrain_epochs;
  JafaModel model;
  model.classifier = train_masked_classifier(data, cfg.masking, pre_cfg, rng.fork(3).seed(), copts);

  SetEncoderConfig ecfg;
  ecfg.d = d;
  model.encoder = SetEncoder(ecfg, init_rng);
  model.q_head.w = Matrix(ecfg.out_dim, d);
  model.q_head.b.assign(d, 0.0);
  {
    const double limit = std::sqrt(6.0 / static_cast<double>(ecfg.out_dim + d));
    for (auto& v : model.q_head.w.data) v = init_rng.uniform(-limit, limit);
  }
  SetEncoder target_enc = model.encoder;
  DenseLayer target_head = model.q_head;

  QNetRefs online{&model.encoder, &model.q_head};
  QNetRefs target{&target_enc, &target_head};

  const std::vector<double> class_weights =
      class_weights_from_labels(data.train.y, data.num_classes);
  AcquisitionEnv env(data.train.x, data.train.y, budget, model.classifier,
                     RewardKind::sparse_terminal_loss);
  env.set_loss_weights(class_weights);

  Adam opt(cfg.learning_rate);
  SetEncoderGrads enc_grads = model.encoder.make_grads();
  auto online_params = online.params();
  auto target_params = target.params();
  std::vector<ParamRef> grad_refs = param_refs(enc_grads.read);
  grad_refs.push_back({enc_grads.proc.w.data.data(), enc_grads.proc.w.data.size()});
  grad_refs.push_back({enc_grads.proc.b.data(), enc_grads.proc.b.size()});
  {
    const auto w = param_refs(enc_grads.write);
    grad_refs.insert(grad_refs.end(), w.begin(), w.end());
  }
  DenseLayer head_grads;
  head_grads.w = Matrix(model.q_head.w.rows, model.q_head.w.cols);
  head_grads.b.assign(model.q_head.b.size(), 0.0);
  grad_refs.push_back({head_grads.w.data.data(), head_grads.w.data.size()});
  grad_refs.push_back({head_grads.b.data(), head_grads.b.size()});

  ClassifierTrainer clf_trainer(&model.classifier, cfg.learning_rate, class_weights);

  const std::size_t replay_capacity = cfg.replay_capacity > 0 ? cfg.replay_capacity : 2000;
  std::deque<StoredEpisode> replay;

  // parallel agents advanced in lockstep
  struct Agent {
    AcquisitionState state;
    StoredEpisode episode;
  };
  std::vector<Agent> agents(static_cast<std::size_t>(cfg.n_agents));
  for (auto& a : agents) {
    a.episode.row = act_rng.uniform_index(data.train.x.rows);
    a.state = env.reset_one(a.episode.row);
  }

  double return_acc = 0.0;
  std::size_t return_count = 0;
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : std::max(1, cfg.n_batches / 20);

  for (int iter = 0; iter < cfg.n_batches; ++iter) {
    const double eps = linear_epsilon(iter, cfg.n_batches, cfg.eps_min);

    for (auto& a : agents) {
      const int action = act_rng.uniform() < eps ? random_legal(a.state, act_rng)
                                                 : legal_argmax(online.q_values(a.state), a.state);
      const Transition t = env.step(a.state, action);
      a.episode.actions.push_back(action);
      a.episode.rewards.push_back(t.reward);
      if (t.done) {
        double ret = 0.0;
        for (double r : a.episode.rewards) ret += r;
        return_acc += ret;
        ++return_count;
        replay.push_back(std::move(a.episode));
        if (replay.size() > replay_capacity) replay.pop_front();
        a.episode = StoredEpisode{};
        a.episode.row = act_rng.uniform_index(data.train.x.rows);
        a.state = env.reset_one(a.episode.row);
      }
    }
    if (replay.empty()) throw std::runtime_error("train_jafa: replay underflow");

    // sample episodes until we cover batch_size transitions
    std::vector<const StoredEpisode*> batch;
    std::size_t transitions = 0;
    while (transitions < cfg.batch_size) {
      const StoredEpisode& ep = replay[sample_rng.uniform_index(replay.size())];
      batch.push_back(&ep);
      transitions += ep.actions.size();
    }

    enc_grads.zero();
    head_grads.w.fill(0.0);
    std::fill(head_grads.b.begin(), head_grads.b.end(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(transitions);

    std::vector<Matrix> clf_values, clf_masks;
    std::vector<int> clf_labels;
    const bool joint_phase = eps <= cfg.eps_min + 1e-12;

    for (const StoredEpisode* ep : batch) {
      // reconstruct states and bootstrap values along the episode
      AcquisitionState s = env.reset_one(ep->row);
      std::vector<AcquisitionState> states;
      states.push_back(s);
      for (const int a : ep->actions) {
        AcquisitionState next = states.back();
        next.values[static_cast<std::size_t>(a)] = data.train.x(ep->row, static_cast<std::size_t>(a));
        next.mask[static_cast<std::size_t>(a)] = 1.0;
        next.observed.push_back(a);
        next.step += 1;
        states.push_back(next);
      }
      const std::size_t T = ep->actions.size();
      std::vector<double> bootstrap(T, 0.0);
      for (std::size_t t = 0; t + 1 < T; ++t) {
        const auto q = target.q_values(states[t + 1]);
        bootstrap[t] = q[static_cast<std::size_t>(legal_argmax(q, states[t + 1]))];
      }
      const std::vector<double> targets = lambda_return(ep->rewards, bootstrap, cfg.lambda);

      for (std::size_t t = 0; t < T; ++t) {
        SetEncoderTape tape;
        const std::vector<double> out = model.encoder.forward(states[t], tape);
        const auto a = static_cast<std::size_t>(ep->actions[t]);
        double qa = model.q_head.b[a];
        for (std::size_t i = 0; i < out.size(); ++i) qa += out[i] * model.q_head.w(i, a);
        const double dq = 2.0 * (qa - targets[t]) * inv_n;
        if (!std::isfinite(dq)) throw std::runtime_error("train_jafa: divergence");
        std::vector<double> dout(out.size(), 0.0);
        for (std::size_t i = 0; i < out.size(); ++i) {
          head_grads.w(i, a) += out[i] * dq;
          dout[i] = model.q_head.w(i, a) * dq;
        }
        head_grads.b[a] += dq;
        model.encoder.backward(tape, dout, enc_grads);
      }

      if (joint_phase) {
        for (std::size_t t = 1; t <= T; ++t) {
          Matrix v(1, d), mk(1, d);
          std::copy(states[t].values.begin(), states[t].values.end(), v.row(0));
          std::copy(states[t].mask.begin(), states[t].mask.end(), mk.row(0));
          clf_values.push_back(std::move(v));
          clf_masks.push_back(std::move(mk));
          clf_labels.push_back(data.train.y[ep->row]);
        }
      }
    }
    opt.step(online_params, grad_refs);
    polyak_update(target_params, online_params, cfg.tau);

    // joint classifier updates once epsilon has decayed
    if (joint_phase && !clf_labels.empty()) {
      Matrix values(clf_labels.size(), d), masks(clf_labels.size(), d);
      for (std::size_t i = 0; i < clf_labels.size(); ++i) {
        std::copy(clf_values[i].row(0), clf_values[i].row(0) + d, values.row(i));
        std::copy(clf_masks[i].row(0), clf_masks[i].row(0) + d, masks.row(i));
      }
      clf_trainer.update(values, masks, clf_labels);
    }

    if (curve && (iter % eval_every == 0 || iter + 1 == cfg.n_batches)) {
      const double mean_ret = return_count > 0 ? return_acc / static_cast<double>(return_count) : 0.0;
      const double val_acc = greedy_eval_accuracy(
          [&](const AcquisitionState& st) { return legal_argmax(online.q_values(st), st); },
          data.val, budget, model.classifier);
      curve->push_back({static_cast<double>(iter), mean_ret, val_acc});
      return_acc = 0.0;
      return_count = 0;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// OL

std::vector<double> OlModel::q_values(const AcquisitionState& s) const {
  const std::vector<double> probs = p_net.predict(s.masked_input());
  Matrix in(1, 2 * s.n_features() + probs.size());
  double* r = in.row(0);
  std::copy(s.values.begin(), s.values.end(), r);
  std::copy(s.mask.begin(), s.mask.end(), r + s.n_features());
  std::copy(probs.begin(), probs.end(), r + 2 * s.n_features());
  const Matrix q = q_net.forward(in);
  return {q.data.begin(), q.data.end()};
}

nlohmann::json OlModel::to_json() const {
  return {{"p_net", p_net.to_json()}, {"q_net", q_net.to_json()}};
}

OlModel OlModel::from_json(const nlohmann::json& j) {
  OlModel m;
  m.p_net = MaskedClassifier::from_json(j.at("p_net"));
  m.q_net = Mlp::from_json(j.at("q_net"));
  return m;
}

int OlPolicy::select(const AcquisitionState& s, Rng&) {
  return legal_argmax(model_.q_values(s), s);
}

namespace {

struct StoredTransition {
  std::size_t row = 0;
  std::vector<int> observed_before;
  int action = -1;
  double reward = 0.0;
  bool done = false;
};

AcquisitionState rebuild_state(const Matrix& x, std::size_t row, int budget,
                               const std::vector<int>& observed) {
  AcquisitionState s;
  s.values.assign(x.cols, 0.0);
  s.mask.assign(x.cols, 0.0);
  s.budget = budget;
  s.instance = row;
  for (const int i : observed) {
    s.values[static_cast<std::size_t>(i)] = x(row, static_cast<std::size_t>(i));
    s.mask[static_cast<std::size_t>(i)] = 1.0;
    s.observed.push_back(i);
  }
  s.step = static_cast<int>(observed.size());
  return s;
}

}  // namespace

OlModel train_ol(const DatasetBundle& data, int budget, const RlConfig& cfg, std::uint64_t seed,
                 TrainCurve* curve) {
  if (budget < 1 || static_cast<std::size_t>(budget) > data.n_features)
    throw std::invalid_argument("train_ol: budget must be in [1, d]");
  const std::size_t d = data.n_features;
  const auto C = static_cast<std::size_t>(data.num_classes);
  Rng rng(seed);
  Rng init_rng = rng.fork(0), act_rng = rng.fork(1), sample_rng = rng.fork(2);

  PretrainOptions popts;
  popts.hidden_dims = {64, 32, 16};
  popts.dropout_rate = 0.1;
  TrainConfig pre_cfg;
  pre_cfg.max_epochs = cfg.pretrain_epochs;
  OlModel model;
  model.p_net = train_masked_classifier(data, cfg.masking, pre_cfg, rng.fork(3).seed(), popts);

  MlpConfig qcfg;
  qcfg.input_dim = 2 * d + C;
  qcfg.hidden_dims = {64, 32};
  qcfg.output_dim = d;
  model.q_net = Mlp(qcfg, init_rng);
  Mlp target_q = model.q_net;

  const std::vector<double> class_weights =
      class_weights_from_labels(data.train.y, data.num_classes);
  AcquisitionEnv env(data.train.x, data.train.y, budget, model.p_net,
                     RewardKind::certainty_delta);
  env.set_certainty(cfg.cert_passes, rng.fork(4).seed());

  Adam opt(cfg.learning_rate);
  MlpGrads q_grads = model.q_net.make_grads();
  auto q_params = param_refs(model.q_net);
  auto q_grefs = param_refs(q_grads);
  auto target_params = param_refs(target_q);

  ClassifierTrainer p_trainer(&model.p_net, cfg.learning_rate, class_weights);

  const std::size_t replay_capacity =
      cfg.replay_capacity > 0 ? cfg.replay_capacity : 1000 * d;
  std::deque<StoredTransition> replay;

  std::vector<AcquisitionState> agents(static_cast<std::size_t>(cfg.n_agents));
  for (auto& s : agents) s = env.reset_one(act_rng.uniform_index(data.train.x.rows));

  auto q_input = [&](const AcquisitionState& s) {
    const std::vector<double> probs = model.p_net.predict(s.masked_input());
    Matrix in(1, 2 * d + C);
    double* r = in.row(0);
    std::copy(s.values.begin(), s.values.end(), r);
    std::copy(s.mask.begin(), s.mask.end(), r + d);
    std::copy(probs.begin(), probs.end(), r + 2 * d);
    return in;
  };

  double return_acc = 0.0;
  std::size_t return_count = 0;
  double episode_ret = 0.0;
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : std::max(1, cfg.n_batches / 20);

  for (int iter = 0; iter < cfg.n_batches; ++iter) {
    const double eps = linear_epsilon(iter, cfg.n_batches, cfg.eps_min);

    for (auto& s : agents) {
      StoredTransition tr;
      tr.row = s.instance;
      tr.observed_before = s.observed;
      const int action = act_rng.uniform() < eps ? random_legal(s, act_rng)
                                                 : legal_argmax(model.q_values(s), s);
      const Transition t = env.step(s, action);
      tr.action = action;
      tr.reward = t.reward;
      tr.done = t.done;
      replay.push_back(std::move(tr));
      if (replay.size() > replay_capacity) replay.pop_front();
      episode_ret += t.reward;
      if (t.done) {
        return_acc += episode_ret;
        episode_ret = 0.0;
        ++return_count;
        s = env.reset_one(act_rng.uniform_index(data.train.x.rows));
      }
    }
    if (replay.empty()) throw std::runtime_error("train_ol: replay underflow");

    const std::size_t bs = std::min(cfg.batch_size, replay.size());
    q_grads.zero();
    const double inv_n = 1.0 / static_cast<double>(bs);
    Matrix clf_values(bs, d), clf_masks(bs, d);
    std::vector<int> clf_labels(bs);

    for (std::size_t b = 0; b < bs; ++b) {
      const StoredTransition& tr = replay[sample_rng.uniform_index(replay.size())];
      AcquisitionState s = rebuild_state(data.train.x, tr.row, budget, tr.observed_before);

      double target = tr.reward;
      if (!tr.done) {
        std::vector<int> next_obs = tr.observed_before;
        next_obs.push_back(tr.action);
        AcquisitionState sn = rebuild_state(data.train.x, tr.row, budget, next_obs);
        const std::vector<double> probs = model.p_net.predict(sn.masked_input());
        Matrix in(1, 2 * d + C);
        double* r = in.row(0);
        std::copy(sn.values.begin(), sn.values.end(), r);
        std::copy(sn.mask.begin(), sn.mask.end(), r + d);
        std::copy(probs.begin(), probs.end(), r + 2 * d);
        const Matrix qn = target_q.forward(in);
        const std::vector<double> qv(qn.data.begin(), qn.data.end());
        target += qv[static_cast<std::size_t>(legal_argmax(qv, sn))];
      }

      MlpTape tape;
      const Matrix in = q_input(s);
      const Matrix q = model.q_net.forward(in, tape);
      const auto a = static_cast<std::size_t>(tr.action);
      const double dq = 2.0 * (q(0, a) - target) * inv_n;
      if (!std::isfinite(dq)) throw std::runtime_error("train_ol: divergence");
      Matrix dqm(1, d, 0.0);
      dqm(0, a) = dq;
      model.q_net.backward(tape, dqm, q_grads);

      std::copy(s.values.begin(), s.values.end(), clf_values.row(b));
      std::copy(s.mask.begin(), s.mask.end(), clf_masks.row(b));
      clf_labels[b] = data.train.y[tr.row];
    }
    opt.step(q_params, q_grefs);
    polyak_update(target_params, q_params, cfg.tau);
    p_trainer.update(clf_values, clf_masks, clf_labels);

    if (curve && (iter % eval_every == 0 || iter + 1 == cfg.n_batches)) {
      const double mean_ret = return_count > 0 ? return_acc / static_cast<double>(return_count) : 0.0;
      const double val_acc = greedy_eval_accuracy(
          [&](const AcquisitionState& st) { return legal_argmax(model.q_values(st), st); },
          data.val, budget, model.p_net);
      curve->push_back({static_cast<double>(iter), mean_ret, val_acc});
      return_acc = 0.0;
      return_count = 0;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// ODIN (PPO)

std::vector<double> OdinModel::masked_logits(const AcquisitionState& s) const {
  Matrix in(1, 2 * s.n_features());
  double* r = in.row(0);
  std::copy(s.values.begin(), s.values.end(), r);
  std::copy(s.mask.begin(), s.mask.end(), r + s.n_features());
  const Matrix logits = policy_net.forward(in);
  std::vector<double> out(logits.data.begin(), logits.data.end());
  for (std::size_t j = 0; j < out.size(); ++j)
    if (s.mask[j] != 0.0) out[j] = -1e30;
  return out;
}

int OdinModel::sample_action(const AcquisitionState& s, Rng& rng) const {
  const std::vector<double> logits = masked_logits(s);
  double zmax = -std::numeric_limits<double>::infinity();
  for (const double z : logits) zmax = std::max(zmax, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(logits[j] - zmax);
    sum += p[j];
  }
  double u = rng.uniform() * sum;
  for (std::size_t j = 0; j < p.size(); ++j) {
    u -= p[j];
    if (u <= 0.0) return static_cast<int>(j);
  }
  return legal_argmax(logits, s);
}

nlohmann::json OdinModel::to_json() const {
  return {{"policy_net", policy_net.to_json()}, {"value_net", value_net.to_json()}};
}

OdinModel OdinModel::from_json(const nlohmann::json& j) {
  OdinModel m;
  m.policy_net = Mlp::from_json(j.at("policy_net"));
  m.value_net = Mlp::from_json(j.at("value_net"));
  return m;
}

int OdinPolicy::select(const AcquisitionState& s, Rng&) {
  return legal_argmax(model_.masked_logits(s), s);
}

OdinModel train_odin(const DatasetBundle& data, int budget, const OdinConfig& cfg,
                     std::uint64_t seed, const ProbModel& reward_model, const Pvae* pvae,
                     TrainCurve* curve) {
  if (budget < 1 || static_cast<std::size_t>(budget) > data.n_features)
    throw std::invalid_argument("train_odin: budget must be in [1, d]");
  if (cfg.model_based && pvae == nullptr)
    throw std::invalid_argument("train_odin: model_based requires a pvae");
  const std::size_t d = data.n_features;
  Rng rng(seed);
  Rng init_rng = rng.fork(0), act_rng = rng.fork(1), mb_rng = rng.fork(2);

  OdinModel model;
  MlpConfig pcfg;
  pcfg.input_dim = 2 * d;
  pcfg.hidden_dims = cfg.hidden_dims;
  pcfg.output_dim = d;
  model.policy_net = Mlp(pcfg, init_rng);
  MlpConfig vcfg;
  vcfg.input_dim = 2 * d;
  vcfg.hidden_dims = cfg.hidden_dims;
  vcfg.output_dim = 1;
  model.value_net = Mlp(vcfg, init_rng);

  const std::vector<double> class_weights =
      class_weights_from_labels(data.train.y, data.num_classes);
  AcquisitionEnv env(data.train.x, data.train.y, budget, reward_model,
                     RewardKind::dense_neg_loss);
  env.set_loss_weights(class_weights);
  if (cfg.model_based) {
    env.set_value_source([pvae, &mb_rng](const AcquisitionState& s, int action) {
      return pvae->sample_feature(s.masked_input(), action, mb_rng);
    });
  }

  Adam pol_opt(cfg.rl.learning_rate), val_opt(cfg.rl.learning_rate);
  MlpGrads pol_grads = model.policy_net.make_grads();
  MlpGrads val_grads = model.value_net.make_grads();
  auto pol_params = param_refs(model.policy_net);
  auto val_params = param_refs(model.value_net);
  auto pol_grefs = param_refs(pol_grads);
  auto val_grefs = param_refs(val_grads);

  const auto n_agents = static_cast<std::size_t>(cfg.rl.n_agents);
  const auto T = static_cast<std::size_t>(budget);
  const int eval_every =
      cfg.rl.eval_every > 0 ? cfg.rl.eval_every : std::max(1, cfg.rl.n_batches / 20);
  bool entropy_warned = false;

  for (int iter = 0; iter < cfg.rl.n_batches; ++iter) {
    // collect n_agents fresh episodes in lockstep
    const std::size_t N = n_agents * T;
    Matrix states(N, 2 * d);
    std::vector<int> actions(N);
    std::vector<double> rewards(N), logp_old(N);
    std::vector<std::uint8_t> illegal(N * d, 0);

    std::vector<AcquisitionState> agents(n_agents);
    for (auto& s : agents) s = env.reset_one(act_rng.uniform_index(data.train.x.rows));

    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t a = 0; a < n_agents; ++a) {
        const std::size_t k = a * T + t;
        AcquisitionState& s = agents[a];
        double* r = states.row(k);
        std::copy(s.values.begin(), s.values.end(), r);
        std::copy(s.mask.begin(), s.mask.end(), r + d);
        for (std::size_t j = 0; j < d; ++j) illegal[k * d + j] = s.mask[j] != 0.0 ? 1 : 0;
        const int action = model.sample_action(s, act_rng);
        actions[k] = action;
        const Transition tr = env.step(s, action);
        rewards[k] = tr.reward;
      }
    }

    // old log-probs and values under the collection-time parameters
    const Matrix logits_all = model.policy_net.forward(states);
    Matrix masked(N, d);
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t j = 0; j < d; ++j)
        masked(k, j) = illegal[k * d + j] ? -1e30 : logits_all(k, j);
    const Matrix probs_old = softmax(masked);
    for (std::size_t k = 0; k < N; ++k)
      logp_old[k] =
          std::log(std::max(probs_old(k, static_cast<std::size_t>(actions[k])), 1e-300));

    const Matrix values_out = model.value_net.forward(states);

    // GAE with gamma = 1
    std::vector<double> adv(N, 0.0), ret(N, 0.0);
    double mean_return = 0.0;
    for (std::size_t a = 0; a < n_agents; ++a) {
      double gae = 0.0;
      for (std::size_t t = T; t-- > 0;) {
        const std::size_t k = a * T + t;
        const double v = values_out(k, 0);
        const double v_next = t + 1 < T ? values_out(a * T + t + 1, 0) : 0.0;
        const double delta = rewards[k] + v_next - v;
        gae = delta + cfg.gae_lambda * gae;
        adv[k] = gae;
        ret[k] = gae + v;
        mean_return += rewards[k];
      }
    }
    mean_return /= static_cast<double>(n_agents);

    double adv_mean = 0.0, adv_sq = 0.0;
    for (const double a : adv) adv_mean += a;
    adv_mean /= static_cast<double>(N);
    for (const double a : adv) adv_sq += (a - adv_mean) * (a - adv_mean);
    const double adv_sd = std::sqrt(adv_sq / static_cast<double>(N)) + 1e-8;
    for (auto& a : adv) a = (a - adv_mean) / adv_sd;

    // single optimization pass
    MlpTape pol_tape;
    const Matrix logits = model.policy_net.forward(states, pol_tape);
    Matrix masked2(N, d);
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t j = 0; j < d; ++j)
        masked2(k, j) = illegal[k * d + j] ? -1e30 : logits(k, j);
    const Matrix p = softmax(masked2);

    Matrix dlogits(N, d, 0.0);
    const double inv_n = 1.0 / static_cast<double>(N);
    double mean_entropy = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const auto a = static_cast<std::size_t>(actions[k]);
      const double logp = std::log(std::max(p(k, a), 1e-300));
      const double ratio = std::exp(logp - logp_old[k]);
      const bool clipped = (adv[k] >= 0.0 && ratio > 1.0 + cfg.clip_ratio) ||
                           (adv[k] < 0.0 && ratio < 1.0 - cfg.clip_ratio);
      double entropy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double pj = p(k, j);
        if (pj > 0.0) entropy -= pj * std::log(pj);
      }
      mean_entropy += entropy * inv_n;
      double* dl = dlogits.row(k);
      if (!clipped) {
        const double coef = -adv[k] * ratio * inv_n;
        for (std::size_t j = 0; j < d; ++j) dl[j] += coef * (-(p(k, j)));
        dl[a] += coef;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double pj = p(k, j);
        if (pj > 0.0)
          dl[j] += cfg.entropy_coef * pj * (std::log(pj) + entropy) * inv_n;
      }
    }
    pol_grads.zero();
    model.policy_net.backward(pol_tape, dlogits, pol_grads);
    pol_opt.step(pol_params, pol_grefs);

    MlpTape val_tape;
    const Matrix v_pred = model.value_net.forward(states, val_tape);
    Matrix dv(N, 1);
    double v_loss = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double diff = v_pred(k, 0) - ret[k];
      v_loss += diff * diff * inv_n;
      dv(k, 0) = 2.0 * cfg.value_coef * diff * inv_n;
    }
    if (!std::isfinite(v_loss) || !std::isfinite(mean_entropy))
      throw std::runtime_error("train_odin: divergence");
    val_grads.zero();
    model.value_net.backward(val_tape, dv, val_grads);
    val_opt.step(val_params, val_grefs);

    if (!entropy_warned && iter > cfg.rl.n_batches / 10 && mean_entropy < 1e-3) {
      std::cerr << "train_odin: policy entropy collapsed (" << mean_entropy << ")\n";
      entropy_warned = true;
    }

    if (curve && (iter % eval_every == 0 || iter + 1 == cfg.rl.n_batches)) {
      const double val_acc = greedy_eval_accuracy(
          [&](const AcquisitionState& st) { return legal_argmax(model.masked_logits(st), st); },
          data.val, budget, reward_model);
      curve->push_back({static_cast<double>(iter), mean_return, val_acc});
    }
  }
  return model;
}

}  // namespace afa
