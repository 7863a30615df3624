#include "afa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace afa {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string to_string(ClassifierMode m) {
  return m == ClassifierMode::shared ? "shared" : "builtin";
}

std::string to_string(MetricKind m) { return m == MetricKind::accuracy ? "accuracy" : "f1"; }

double metric(const std::vector<int>& predictions, const std::vector<int>& labels,
              MetricKind kind, int num_classes) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("metric: empty or mismatched inputs");
  if (kind == MetricKind::accuracy) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
      if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
  }
  // macro F1 over classes with any presence in predictions or labels
  double f1_sum = 0.0;
  std::size_t f1_count = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const bool p = predictions[i] == c;
      const bool l = labels[i] == c;
      if (p && l) ++tp;
      else if (p && !l) ++fp;
      else if (!p && l) ++fn;
    }
    if (tp + fp + fn == 0) continue;
    const double prec = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    ++f1_count;
  }
  return f1_count > 0 ? f1_sum / static_cast<double>(f1_count) : 0.0;
}

TrainScale TrainScale::smoke() {
  TrainScale s;
  s.pretrain_epochs = 60;
  s.greedy_epochs = 30;
  s.gdfs_stage_epochs = 8;
  s.greedy_pretrain_epochs = 40;
  s.rl_batches = 600;
  s.rl_agents = 32;
  s.rl_batch_size = 128;
  s.eddi_mc_samples = 30;
  s.aaco_n_samples = 200;
  return s;
}

MetricKind ExperimentConfig::metric_kind() const {
  return dataset.find("physionet") != std::string::npos ? MetricKind::f1
                                                        : MetricKind::accuracy;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["csv_label"] = csv_label;
  j["csv_classes"] = csv_classes;
  j["method"] = method;
  j["budget"] = budget;
  j["classifier_mode"] = to_string(mode);
  j["seeds"] = seeds;
  j["splits"] = splits;
  j["workdir"] = workdir;
  j["scale"] = {{"pretrain_epochs", scale.pretrain_epochs},
                {"greedy_epochs", scale.greedy_epochs},
                {"gdfs_stage_epochs", scale.gdfs_stage_epochs},
                {"greedy_pretrain_epochs", scale.greedy_pretrain_epochs},
                {"rl_batches", scale.rl_batches},
                {"rl_agents", scale.rl_agents},
                {"rl_batch_size", scale.rl_batch_size},
                {"eddi_mc_samples", scale.eddi_mc_samples},
                {"aaco_n_samples", scale.aaco_n_samples},
                {"aaco_k", scale.aaco_k},
                {"unroll_steps", scale.unroll_steps}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.dataset = j.value("dataset", c.dataset);
  c.csv_label = j.value("csv_label", c.csv_label);
  c.csv_classes = j.value("csv_classes", c.csv_classes);
  c.method = j.value("method", c.method);
  c.budget = j.value("budget", c.budget);
  if (j.contains("classifier_mode"))
    c.mode = j.at("classifier_mode").get<std::string>() == "builtin" ? ClassifierMode::builtin
                                                                     : ClassifierMode::shared;
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("splits")) c.splits = j.at("splits").get<std::vector<std::uint64_t>>();
  c.workdir = j.value("workdir", c.workdir);
  if (j.contains("scale")) {
    const auto& s = j.at("scale");
    c.scale.pretrain_epochs = s.value("pretrain_epochs", c.scale.pretrain_epochs);
    c.scale.greedy_epochs = s.value("greedy_epochs", c.scale.greedy_epochs);
    c.scale.gdfs_stage_epochs = s.value("gdfs_stage_epochs", c.scale.gdfs_stage_epochs);
    c.scale.greedy_pretrain_epochs =
        s.value("greedy_pretrain_epochs", c.scale.greedy_pretrain_epochs);
    c.scale.rl_batches = s.value("rl_batches", c.scale.rl_batches);
    c.scale.rl_agents = s.value("rl_agents", c.scale.rl_agents);
    c.scale.rl_batch_size = s.value("rl_batch_size", c.scale.rl_batch_size);
    c.scale.eddi_mc_samples = s.value("eddi_mc_samples", c.scale.eddi_mc_samples);
    c.scale.aaco_n_samples = s.value("aaco_n_samples", c.scale.aaco_n_samples);
    c.scale.aaco_k = s.value("aaco_k", c.scale.aaco_k);
    c.scale.unroll_steps = s.value("unroll_steps", c.scale.unroll_steps);
  }
  return c;
}

std::vector<int> budget_presets(const std::string& dataset) {
  if (dataset == "cube" || dataset == "afacontext") return {3, 5, 10};
  if (dataset == "mnist" || dataset == "fashionmnist") return {10, 20, 30};
  return {5, 10, 15};  // diabetes, physionet, miniboone and other tabular data
}

DatasetBundle make_dataset(const ExperimentConfig& cfg, std::uint64_t split_seed) {
  if (cfg.dataset == "cube") return generate_cube(CubeSpec{}, split_seed);
  if (cfg.dataset == "afacontext") return generate_afacontext(AfaContextSpec{}, split_seed);
  CsvSchema schema;
  schema.label_column = cfg.csv_label.empty() ? "label" : cfg.csv_label;
  if (cfg.csv_classes < 2)
    throw std::invalid_argument("make_dataset: csv_classes required for CSV datasets");
  schema.num_classes = cfg.csv_classes;
  return load_csv(cfg.dataset, schema, split_seed);
}

SharedPredictor shared_predictor_for(const DatasetBundle& data, const TrainScale& scale,
                                     const std::string& workdir) {
  const std::uint64_t fp = data.data_fingerprint();
  fs::path cache;
  if (!workdir.empty()) {
    cache = fs::path(workdir) / "predictors";
    fs::create_directories(cache);
    cache /= data.name + "_" + std::to_string(fp) + ".json";
    if (fs::exists(cache)) {
      SharedPredictor p = load_predictor(cache.string());
      if (p.manifest.value("dataset_fingerprint", 0ull) == fp) return p;
    }
  }
  TrainConfig cfg;
  cfg.max_epochs = scale.pretrain_epochs;
  const MaskingDistribution masking = MaskingDistribution::for_dataset(data.name);
  PretrainOptions opts;
  if (data.name == "mnist" || data.name == "fashionmnist") opts.val_masking_prob = 0.25;
  SharedPredictor p = pretrain_shared(data, masking, cfg, /*seed=*/777, opts);
  if (!cache.empty()) save_predictor(p, cache.string());
  return p;
}

bool method_has_builtin(const std::string& method) {
  return method == "gdfs" || method == "dime" || method == "jafa" || method == "ol" ||
         method == "caes";
}

std::vector<std::string> known_methods() {
  return {"random", "oracle_afacontext", "eddi",      "gdfs", "dime", "jafa",
          "ol",     "odin_mfrl",         "odin_mbrl", "aaco", "pts",  "caes"};
}

int RandomPolicy::select(const AcquisitionState& s, Rng& rng) {
  std::vector<int> legal;
  for (std::size_t j = 0; j < s.mask.size(); ++j)
    if (s.mask[j] == 0.0) legal.push_back(static_cast<int>(j));
  if (legal.empty()) throw std::logic_error("RandomPolicy: no unobserved feature");
  return legal[rng.uniform_index(legal.size())];
}

int oracle_afacontext(const AcquisitionState& s, const AfaContextSpec& spec,
                      const ProbModel& model) {
  if (s.mask.size() != spec.n_features)
    throw std::invalid_argument("oracle_afacontext: wrong dataset");
  if (!s.is_observed(static_cast<int>(spec.context_a)))
    return static_cast<int>(spec.context_a);
  const bool context_is_a = s.values[spec.context_a] > 0.5;
  const std::size_t base = spec.group_begin(context_is_a);

  const std::vector<double> posterior = model.predict(s.masked_input());
  std::vector<int> class_rank(posterior.size());
  for (std::size_t c = 0; c < posterior.size(); ++c) class_rank[c] = static_cast<int>(c);
  std::stable_sort(class_rank.begin(), class_rank.end(), [&](int a, int b) {
    return posterior[static_cast<std::size_t>(a)] > posterior[static_cast<std::size_t>(b)];
  });
  for (const int k : class_rank) {
    for (std::size_t off = 0; off < 3; ++off) {
      const int idx = static_cast<int>(base + static_cast<std::size_t>(k) + off);
      if (!s.is_observed(idx)) return idx;
    }
  }
  // group fully observed; fall back to the second context feature, then noise
  if (!s.is_observed(static_cast<int>(spec.context_b)))
    return static_cast<int>(spec.context_b);
  for (std::size_t j = 0; j < s.mask.size(); ++j)
    if (s.mask[j] == 0.0) return static_cast<int>(j);
  throw std::logic_error("oracle_afacontext: no unobserved feature");
}

int AfaContextOraclePolicy::select(const AcquisitionState& s, Rng&) {
  return oracle_afacontext(s, spec_, *model_);
}

namespace {

// CAE-S keeps its per-budget predictor alive next to the order policy.
class CaesPolicy : public StaticOrderPolicy {
 public:
  CaesPolicy(StaticSelection selection, int budget, std::uint64_t seed,
             std::unique_ptr<MaskedClassifier> predictor)
      : StaticOrderPolicy("caes", std::move(selection), budget, seed),
        predictor_(std::move(predictor)) {
    set_builtin(predictor_.get());
  }

 private:
  std::unique_ptr<MaskedClassifier> predictor_;
};

}  // namespace

TrainedPolicy train_policy(const std::string& method, const DatasetBundle& data,
                           const SharedPredictor& shared, int budget, std::uint64_t seed,
                           const TrainScale& scale, ClassifierMode mode) {
  if (mode == ClassifierMode::builtin && !method_has_builtin(method))
    throw std::invalid_argument("train_policy: method '" + method + "' has no builtin classifier");

  const auto t0 = Clock::now();
  TrainedPolicy out;

  const MaskingDistribution masking = MaskingDistribution::for_dataset(data.name);

  if (method == "random") {
    out.policy = std::make_unique<RandomPolicy>();
  } else if (method == "oracle_afacontext") {
    if (!data.afacontext)
      throw std::invalid_argument("oracle_afacontext requires the afacontext dataset");
    out.policy = std::make_unique<AfaContextOraclePolicy>(*data.afacontext, &shared.model);
  } else if (method == "eddi") {
    TrainConfig cfg;
    cfg.max_epochs = scale.greedy_epochs;
    PvaeTrainResult pvae = train_pvae(data, masking, cfg, seed);
    out.policy = std::make_unique<EddiPolicy>(std::move(pvae.model), &shared.model,
                                              scale.eddi_mc_samples, seed);
  } else if (method == "gdfs") {
    GreedyTrainConfig cfg;
    cfg.masking = masking;
    cfg.stage_epochs = scale.gdfs_stage_epochs;
    cfg.pretrain_epochs = scale.greedy_pretrain_epochs;
    cfg.unroll_steps = scale.unroll_steps;
    out.policy = std::make_unique<GdfsPolicy>(train_gdfs(data, cfg, seed));
  } else if (method == "dime") {
    GreedyTrainConfig cfg;
    cfg.masking = masking;
    cfg.train.max_epochs = scale.greedy_epochs;
    cfg.pretrain_epochs = scale.greedy_pretrain_epochs;
    cfg.unroll_steps = scale.unroll_steps;
    out.policy = std::make_unique<DimePolicy>(train_dime(data, cfg, seed));
  } else if (method == "jafa") {
    RlConfig cfg;
    cfg.masking = masking;
    cfg.n_batches = scale.rl_batches;
    cfg.n_agents = scale.rl_agents;
    cfg.batch_size = scale.rl_batch_size;
    cfg.pretrain_epochs = scale.greedy_pretrain_epochs;
    out.policy = std::make_unique<JafaPolicy>(train_jafa(data, budget, cfg, seed));
  } else if (method == "ol") {
    RlConfig cfg;
    cfg.masking = masking;
    cfg.n_batches = scale.rl_batches;
    cfg.n_agents = scale.rl_agents;
    cfg.batch_size = scale.rl_batch_size;
    cfg.pretrain_epochs = scale.greedy_pretrain_epochs;
    out.policy = std::make_unique<OlPolicy>(train_ol(data, budget, cfg, seed));
  } else if (method == "odin_mfrl" || method == "odin_mbrl") {
    OdinConfig cfg;
    cfg.rl.masking = masking;
    cfg.rl.n_batches = scale.rl_batches;
    cfg.rl.n_agents = scale.rl_agents;
    cfg.rl.batch_size = scale.rl_batch_size;
    cfg.model_based = method == "odin_mbrl";
    if (cfg.model_based) {
      TrainConfig pvae_cfg;
      pvae_cfg.max_epochs = scale.greedy_epochs;
      PvaeTrainResult pvae = train_pvae(data, masking, pvae_cfg, seed);
      auto model = std::make_shared<Pvae>(std::move(pvae.model));
      OdinModel trained = train_odin(data, budget, cfg, seed, shared.model, model.get());
      struct MbrlPolicy : OdinPolicy {
        MbrlPolicy(OdinModel m, std::shared_ptr<Pvae> p)
            : OdinPolicy(std::move(m), true), pvae(std::move(p)) {}
        std::shared_ptr<Pvae> pvae;
      };
      out.policy = std::make_unique<MbrlPolicy>(std::move(trained), std::move(model));
    } else {
      out.policy = std::make_unique<OdinPolicy>(
          train_odin(data, budget, cfg, seed, shared.model, nullptr), false);
    }
  } else if (method == "aaco") {
    KnnIndex knn;
    knn.x_train = &data.train.x;
    knn.y_train = &data.train.y;
    knn.k = std::min(scale.aaco_k, data.train.x.rows);
    AacoOptions opts;
    opts.n_samples = scale.aaco_n_samples;
    out.policy = std::make_unique<AacoPolicy>(knn, &shared.model, opts, seed);
  } else if (method == "pts") {
    out.policy = std::make_unique<StaticOrderPolicy>(
        "pts", permutation_importance(shared.model, data, seed), budget);
  } else if (method == "caes") {
    CaeConfig cfg;
    cfg.train.max_epochs = scale.greedy_epochs;
    StaticSelection sel = train_cae(data, static_cast<std::size_t>(budget), cfg, seed);
    std::unique_ptr<MaskedClassifier> subset_predictor;
    if (mode == ClassifierMode::builtin) {
      TrainConfig pcfg;
      pcfg.max_epochs = scale.pretrain_epochs;
      subset_predictor = std::make_unique<MaskedClassifier>(
          train_subset_predictor(data, sel.selected, pcfg, seed ^ 0x5157));
    }
    out.policy = std::make_unique<CaesPolicy>(std::move(sel), budget, seed,
                                              std::move(subset_predictor));
  } else {
    throw std::invalid_argument("train_policy: unknown method '" + method + "'");
  }

  out.train_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

CellResult evaluate_policy(AcquisitionPolicy& policy, const DatasetBundle& data,
                           const SharedPredictor& shared, int budget, ClassifierMode mode,
                           MetricKind kind, std::uint64_t seed) {
  const ProbModel* clf = &shared.model;
  if (mode == ClassifierMode::builtin) {
    clf = policy.builtin();
    if (!clf) throw std::invalid_argument("evaluate_policy: policy has no builtin classifier");
  }

  const auto t0 = Clock::now();
  const TabularDataset& test = data.test;
  const std::size_t n = test.x.rows;
  const auto b = static_cast<std::size_t>(budget);

  CellResult cell;
  cell.dataset = data.name;
  cell.method = policy.id();
  cell.mode = mode;
  cell.budget = budget;
  cell.seed = seed;
  cell.dataset_fingerprint = data.data_fingerprint();
  cell.predictor_fingerprint =
      mode == ClassifierMode::shared ? shared.weights_fingerprint() : 0;

  std::vector<std::vector<int>> step_preds(b, std::vector<int>(n));
  Rng eval_rng(seed ^ 0x9e3779b97f4a7c15ull);

  for (std::size_t i = 0; i < n; ++i) {
    AcquisitionState s;
    s.values.assign(test.x.cols, 0.0);
    s.mask.assign(test.x.cols, 0.0);
    s.budget = budget;
    s.instance = i;

    Rng inst_rng = eval_rng.fork(i);
    policy.begin_instance(i, inst_rng);
    EpisodeTranscript tr;
    tr.instance = i;
    tr.label = test.y[i];

    for (std::size_t t = 0; t < b; ++t) {
      const int action = policy.select(s, inst_rng);
      if (action < 0 || static_cast<std::size_t>(action) >= s.mask.size() ||
          s.is_observed(action))
        throw std::runtime_error("evaluate_policy: illegal action from " + policy.id());
      s.values[static_cast<std::size_t>(action)] = test.x(i, static_cast<std::size_t>(action));
      s.mask[static_cast<std::size_t>(action)] = 1.0;
      s.observed.push_back(action);
      s.step += 1;

      const std::vector<double> probs = clf->predict(s.masked_input());
      std::size_t arg = 0;
      for (std::size_t c = 1; c < probs.size(); ++c)
        if (probs[c] > probs[arg]) arg = c;
      step_preds[t][i] = static_cast<int>(arg);
      tr.actions.push_back(action);
      tr.rewards.push_back(-nll(probs, test.y[i]));
    }
    cell.transcripts.push_back(std::move(tr));
  }

  cell.step_metric.resize(b);
  for (std::size_t t = 0; t < b; ++t)
    cell.step_metric[t] = metric(step_preds[t], test.y, kind, data.num_classes);
  cell.eval_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return cell;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  result.curve.kind = cfg.metric_kind();

  for (const std::uint64_t split : cfg.splits) {
    const DatasetBundle data = make_dataset(cfg, split);
    const SharedPredictor shared = shared_predictor_for(data, cfg.scale, cfg.workdir);
    for (const std::uint64_t seed : cfg.seeds) {
      TrainedPolicy trained =
          train_policy(cfg.method, data, shared, cfg.budget, seed, cfg.scale, cfg.mode);
      CellResult cell = evaluate_policy(*trained.policy, data, shared, cfg.budget, cfg.mode,
                                        cfg.metric_kind(), seed);
      cell.split = split;
      cell.train_seconds = trained.train_seconds;
      if (!cfg.workdir.empty()) save_cell(cell, cfg.workdir + "/results");
      result.cells.push_back(std::move(cell));
    }
  }

  const auto b = static_cast<std::size_t>(cfg.budget);
  result.curve.mean.assign(b, 0.0);
  result.curve.stddev.assign(b, 0.0);
  result.curve.n_runs = result.cells.size();
  for (std::size_t t = 0; t < b; ++t) {
    double m = 0.0;
    for (const auto& c : result.cells) m += c.step_metric[t];
    m /= static_cast<double>(result.cells.size());
    double sq = 0.0;
    for (const auto& c : result.cells) sq += (c.step_metric[t] - m) * (c.step_metric[t] - m);
    result.curve.mean[t] = m;
    result.curve.stddev[t] =
        result.cells.size() > 1 ? std::sqrt(sq / static_cast<double>(result.cells.size() - 1))
                                : 0.0;
  }
  return result;
}

std::vector<double> replay_curve(const std::vector<EpisodeTranscript>& transcripts,
                                 const DatasetBundle& data, const ProbModel& model,
                                 MetricKind kind) {
  if (transcripts.empty()) throw std::invalid_argument("replay_curve: no transcripts");
  const std::size_t b = transcripts[0].actions.size();
  const std::size_t n = transcripts.size();
  std::vector<std::vector<int>> step_preds(b, std::vector<int>(n));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const EpisodeTranscript& tr = transcripts[i];
    labels[i] = tr.label;
    MaskedInput m;
    m.values.assign(data.test.x.cols, 0.0);
    m.mask.assign(data.test.x.cols, 0.0);
    for (std::size_t t = 0; t < b; ++t) {
      const auto a = static_cast<std::size_t>(tr.actions[t]);
      m.values[a] = data.test.x(tr.instance, a);
      m.mask[a] = 1.0;
      const std::vector<double> probs = model.predict(m);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < probs.size(); ++c)
        if (probs[c] > probs[arg]) arg = c;
      step_preds[t][i] = static_cast<int>(arg);
    }
  }
  std::vector<double> curve(b);
  for (std::size_t t = 0; t < b; ++t)
    curve[t] = metric(step_preds[t], labels, kind, data.num_classes);
  return curve;
}

nlohmann::json CellResult::to_json(bool with_transcripts) const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["method"] = method;
  j["classifier_mode"] = to_string(mode);
  j["budget"] = budget;
  j["seed"] = seed;
  j["split"] = split;
  j["step_metric"] = step_metric;
  j["train_seconds"] = train_seconds;
  j["eval_seconds"] = eval_seconds;
  j["dataset_fingerprint"] = dataset_fingerprint;
  j["predictor_fingerprint"] = predictor_fingerprint;
  if (with_transcripts) {
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : transcripts)
      ts.push_back(nlohmann::json::parse(transcript_to_jsonl(t)));
    j["transcripts"] = std::move(ts);
  }
  return j;
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.dataset = j.at("dataset").get<std::string>();
  c.method = j.at("method").get<std::string>();
  c.mode = j.at("classifier_mode").get<std::string>() == "builtin" ? ClassifierMode::builtin
                                                                   : ClassifierMode::shared;
  c.budget = j.at("budget").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.split = j.at("split").get<std::uint64_t>();
  c.step_metric = j.at("step_metric").get<std::vector<double>>();
  c.train_seconds = j.value("train_seconds", 0.0);
  c.eval_seconds = j.value("eval_seconds", 0.0);
  c.dataset_fingerprint = j.value("dataset_fingerprint", 0ull);
  c.predictor_fingerprint = j.value("predictor_fingerprint", 0ull);
  if (j.contains("transcripts"))
    for (const auto& t : j.at("transcripts"))
      c.transcripts.push_back(transcript_from_jsonl(t.dump()));
  return c;
}

std::string cell_filename(const CellResult& cell) {
  std::string dataset = cell.dataset;
  std::replace(dataset.begin(), dataset.end(), '/', '_');
  return dataset + "_" + cell.method + "_" + to_string(cell.mode) + "_b" +
         std::to_string(cell.budget) + "_s" + std::to_string(cell.seed) + "_p" +
         std::to_string(cell.split) + ".json";
}

void save_cell(const CellResult& cell, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path path = fs::path(dir) / cell_filename(cell);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_cell: cannot open " + path.string());
  f << cell.to_json().dump();
}

std::vector<CellResult> load_cells(const std::string& dir) {
  std::vector<CellResult> cells;
  if (!fs::exists(dir)) return cells;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ifstream f(p);
    nlohmann::json j;
    f >> j;
    cells.push_back(CellResult::from_json(j));
  }
  return cells;
}

std::vector<CsvRow> aggregate_cells(const std::vector<CellResult>& cells) {
  // group by (dataset, method, mode, budget)
  std::vector<CsvRow> rows;
  std::vector<std::string> keys;
  for (const auto& c : cells) {
    const std::string key =
        c.dataset + "|" + c.method + "|" + to_string(c.mode) + "|" + std::to_string(c.budget);
    if (std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
    keys.push_back(key);
    std::vector<const CellResult*> group;
    for (const auto& g : cells)
      if (g.dataset == c.dataset && g.method == c.method && g.mode == c.mode &&
          g.budget == c.budget)
        group.push_back(&g);
    const std::size_t b = group[0]->step_metric.size();
    for (std::size_t t = 0; t < b; ++t) {
      CsvRow row;
      row.dataset = c.dataset;
      row.method = c.method;
      row.classifier_mode = to_string(c.mode);
      row.budget = c.budget;
      row.step = static_cast<int>(t + 1);
      double m = 0.0;
      for (const auto* g : group) m += g->step_metric[t];
      m /= static_cast<double>(group.size());
      double sq = 0.0;
      for (const auto* g : group) sq += (g->step_metric[t] - m) * (g->step_metric[t] - m);
      row.mean = m;
      row.stddev =
          group.size() > 1 ? std::sqrt(sq / static_cast<double>(group.size() - 1)) : 0.0;
      row.n_runs = group.size();
      rows.push_back(row);
    }
  }
  return rows;
}

void write_results_csv(const std::vector<CsvRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_results_csv: cannot open " + path);
  f << "dataset,method,classifier_mode,budget,step,mean,std,n_runs\n";
  for (const auto& r : rows) {
    f << r.dataset << "," << r.method << "," << r.classifier_mode << "," << r.budget << ","
      << r.step << "," << r.mean << "," << r.stddev << "," << r.n_runs << "\n";
  }
}

std::vector<CsvRow> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_results_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_results_csv: empty file");
  if (line.rfind("dataset,method,", 0) != 0)
    throw std::runtime_error("read_results_csv: unexpected header");
  std::vector<CsvRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    CsvRow r;
    std::getline(ss, r.dataset, ',');
    std::getline(ss, r.method, ',');
    std::getline(ss, r.classifier_mode, ',');
    std::getline(ss, cell, ',');
    r.budget = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.step = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.mean = std::stod(cell);
    std::getline(ss, cell, ',');
    r.stddev = std::stod(cell);
    std::getline(ss, cell, ',');
    r.n_runs = static_cast<std::size_t>(std::stoul(cell));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_report(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "# Benchmark report\n\n## Terminal-step metric\n\n";
  out << "| dataset | method | classifier | budget | metric (mean ± std) |\n";
  out << "|---|---|---|---|---|\n";
  const std::vector<CsvRow> rows = aggregate_cells(cells);
  for (const auto& r : rows) {
    if (r.step != r.budget) continue;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", r.mean, r.stddev);
    out << "| " << r.dataset << " | " << r.method << " | " << r.classifier_mode << " | "
        << r.budget << " | " << buf << " |\n";
  }

  out << "\n## Compute time\n\n";
  out << "| method | train s (mean ± std) | eval s (mean ± std) |\n";
  out << "|---|---|---|\n";
  std::vector<std::string> methods;
  for (const auto& c : cells)
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
      methods.push_back(c.method);
  for (const auto& m : methods) {
    std::vector<double> train, eval;
    for (const auto& c : cells)
      if (c.method == m) {
        train.push_back(c.train_seconds);
        eval.push_back(c.eval_seconds);
      }
    auto mean_sd = [](const std::vector<double>& v) {
      double mean = 0.0;
      for (const double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double sq = 0.0;
      for (const double x : v) sq += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
      return std::pair<double, double>(mean, sd);
    };
    const auto [tm, ts] = mean_sd(train);
    const auto [em, es] = mean_sd(eval);
    char buf[128];
    std::snprintf(buf, sizeof buf, "| %s | %.1f ± %.1f | %.1f ± %.1f |", m.c_str(), tm, ts, em,
                  es);
    out << buf << "\n";
  }
  if (rows.empty()) out << "| — | — | — |\n";
  return out.str();
}

}  // namespace afa
