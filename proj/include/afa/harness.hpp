#pragma once

#include <memory>

#include "afa/aaco.hpp"
#include "afa/greedy.hpp"
#include "afa/rl.hpp"
#include "afa/static_sel.hpp"

namespace afa {

enum class ClassifierMode { shared, builtin };
enum class MetricKind { accuracy, f1 };

std::string to_string(ClassifierMode m);
std::string to_string(MetricKind m);

double metric(const std::vector<int>& predictions, const std::vector<int>& labels,
              MetricKind kind, int num_classes);

// Iteration-count knobs so experiments can run from smoke scale to the paper
// presets; hyperparameters (learning rates, taus, lambdas) stay fixed.
struct TrainScale {
  std::size_t pretrain_epochs = 250;
  std::size_t greedy_epochs = 250;        // DIME joint epochs, CAE epochs
  std::size_t gdfs_stage_epochs = 250;
  std::size_t greedy_pretrain_epochs = 100;
  int rl_batches = 10000;
  int rl_agents = 128;
  std::size_t rl_batch_size = 512;
  int eddi_mc_samples = 50;
  int aaco_n_samples = 1000;
  std::size_t aaco_k = 15;
  std::size_t unroll_steps = 10;

  static TrainScale smoke();  // fast settings for tests and CI
};

struct ExperimentConfig {
  std::string dataset = "cube";  // "cube", "afacontext", or a CSV path
  std::string csv_label;         // CSV only
  int csv_classes = 0;           // CSV only
  std::string method = "random";
  int budget = 10;
  ClassifierMode mode = ClassifierMode::shared;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<std::uint64_t> splits = {0, 1, 2};
  TrainScale scale;
  std::string workdir;  // empty: nothing persisted

  MetricKind metric_kind() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct CellResult {
  std::string dataset, method;
  ClassifierMode mode = ClassifierMode::shared;
  int budget = 0;
  std::uint64_t seed = 0, split = 0;
  std::vector<double> step_metric;  // metric after each acquisition, length b
  double train_seconds = 0.0, eval_seconds = 0.0;
  std::uint64_t dataset_fingerprint = 0, predictor_fingerprint = 0;
  std::vector<EpisodeTranscript> transcripts;

  nlohmann::json to_json(bool with_transcripts = true) const;
  static CellResult from_json(const nlohmann::json& j);
};

struct BudgetCurve {
  MetricKind kind = MetricKind::accuracy;
  std::vector<double> mean, stddev;  // per acquisition step
  std::size_t n_runs = 0;
};

struct ExperimentResult {
  BudgetCurve curve;
  std::vector<CellResult> cells;
};

// Budget presets per dataset id: {small, medium, large}.
std::vector<int> budget_presets(const std::string& dataset);

DatasetBundle make_dataset(const ExperimentConfig& cfg, std::uint64_t split_seed);

// Trains (or loads from the workdir cache) the one shared predictor used by
// every method on this dataset split.
SharedPredictor shared_predictor_for(const DatasetBundle& data, const TrainScale& scale,
                                     const std::string& workdir);

struct TrainedPolicy {
  std::unique_ptr<AcquisitionPolicy> policy;
  double train_seconds = 0.0;
};

// Method registry: "random", "oracle_afacontext", "eddi", "gdfs", "dime",
// "jafa", "ol", "odin_mfrl", "odin_mbrl", "aaco", "pts", "caes".
TrainedPolicy train_policy(const std::string& method, const DatasetBundle& data,
                           const SharedPredictor& shared, int budget, std::uint64_t seed,
                           const TrainScale& scale, ClassifierMode mode);

bool method_has_builtin(const std::string& method);
std::vector<std::string> known_methods();

// Rolls the policy over the test split and scores the configured classifier
// after every acquisition.
CellResult evaluate_policy(AcquisitionPolicy& policy, const DatasetBundle& data,
                           const SharedPredictor& shared, int budget, ClassifierMode mode,
                           MetricKind kind, std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Recomputes the per-step metric from transcripts alone.
std::vector<double> replay_curve(const std::vector<EpisodeTranscript>& transcripts,
                                 const DatasetBundle& data, const ProbModel& model,
                                 MetricKind kind);

// The scripted AFAContext lookahead policy: context feature first, then the
// active group's informative features for the classes ranked by posterior.
class AfaContextOraclePolicy : public AcquisitionPolicy {
 public:
  AfaContextOraclePolicy(AfaContextSpec spec, const ProbModel* model)
      : spec_(spec), model_(model) {}
  std::string id() const override { return "oracle_afacontext"; }
  int select(const AcquisitionState& s, Rng& rng) override;

 private:
  AfaContextSpec spec_;
  const ProbModel* model_;
};

int oracle_afacontext(const AcquisitionState& s, const AfaContextSpec& spec,
                      const ProbModel& model);

// Results persistence: one JSON per cell plus an aggregated CSV.
void save_cell(const CellResult& cell, const std::string& dir);
std::vector<CellResult> load_cells(const std::string& dir);
std::string cell_filename(const CellResult& cell);

struct CsvRow {
  std::string dataset, method, classifier_mode;
  int budget = 0, step = 0;
  double mean = 0.0, stddev = 0.0;
  std::size_t n_runs = 0;
};

std::vector<CsvRow> aggregate_cells(const std::vector<CellResult>& cells);
void write_results_csv(const std::vector<CsvRow>& rows, const std::string& path);
std::vector<CsvRow> read_results_csv(const std::string& path);

std::string render_report(const std::vector<CellResult>& cells);

}  // namespace afa
