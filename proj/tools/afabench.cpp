#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "afa/plot.hpp"

namespace fs = std::filesystem;

namespace {

std::string resolve_workdir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("AFABENCH_WORKDIR")) return env;
  return ".";
}

afa::TrainScale scale_from_profile(const std::string& profile) {
  if (profile == "smoke") return afa::TrainScale::smoke();
  if (profile == "paper") return afa::TrainScale{};
  throw CLI::ValidationError("--profile must be smoke or paper");
}

int run_generate(const std::string& dataset, std::uint64_t seed, const std::string& out_dir) {
  afa::DatasetBundle bundle;
  if (dataset == "cube") {
    bundle = afa::generate_cube(afa::CubeSpec{}, seed);
  } else if (dataset == "afacontext") {
    bundle = afa::generate_afacontext(afa::AfaContextSpec{}, seed);
  } else {
    std::cerr << "unknown dataset id: " << dataset << " (expected cube or afacontext)\n";
    return 1;
  }
  fs::create_directories(out_dir);
  afa::write_dataset_csv(bundle.train, out_dir + "/" + dataset + "_train.csv");
  afa::write_dataset_csv(bundle.val, out_dir + "/" + dataset + "_val.csv");
  afa::write_dataset_csv(bundle.test, out_dir + "/" + dataset + "_test.csv");
  std::ofstream manifest(out_dir + "/" + dataset + "_manifest.json");
  manifest << bundle.manifest().dump(2) << "\n";
  std::cout << "wrote " << dataset << " splits to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AFABench: budgeted active feature acquisition benchmark"};
  app.require_subcommand(1);

  std::string workdir_flag;
  app.add_option("--workdir", workdir_flag,
                 "base directory for checkpoints and results (env AFABENCH_WORKDIR)");

  // generate -------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  std::string gen_dataset;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  gen->add_option("dataset", gen_dataset, "cube | afacontext")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory");

  // pretrain --------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "pretrain the shared predictor for a dataset");
  std::string pre_dataset = "cube";
  std::string pre_label;
  int pre_classes = 0;
  std::uint64_t pre_split = 0;
  std::string pre_profile = "paper";
  pre->add_option("--dataset", pre_dataset, "cube | afacontext | path to CSV")->required();
  pre->add_option("--label", pre_label, "label column (CSV datasets)");
  pre->add_option("--classes", pre_classes, "class count (CSV datasets)");
  pre->add_option("--split-seed", pre_split, "dataset split seed");
  pre->add_option("--profile", pre_profile, "training scale: smoke | paper");

  // train -----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train one policy cell");
  std::string tr_dataset = "cube", tr_method = "random", tr_label, tr_mode = "shared",
              tr_profile = "paper";
  int tr_classes = 0, tr_budget = 10;
  std::uint64_t tr_seed = 0, tr_split = 0;
  train->add_option("--dataset", tr_dataset, "cube | afacontext | path to CSV")->required();
  train->add_option("--method", tr_method, "policy id")->required();
  train->add_option("--budget", tr_budget, "acquisition budget");
  train->add_option("--seed", tr_seed, "training seed");
  train->add_option("--split-seed", tr_split, "dataset split seed");
  train->add_option("--label", tr_label, "label column (CSV datasets)");
  train->add_option("--classes", tr_classes, "class count (CSV datasets)");
  train->add_option("--mode", tr_mode, "shared | builtin");
  train->add_option("--profile", tr_profile, "training scale: smoke | paper");

  // evaluate ---------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "run experiment cells and persist results");
  std::string ev_config;
  std::string ev_dataset = "cube", ev_label, ev_mode = "shared", ev_profile = "paper";
  std::vector<std::string> ev_methods;
  std::vector<int> ev_budgets;
  std::vector<std::uint64_t> ev_seeds, ev_splits;
  int ev_classes = 0, ev_jobs = 0;
  eval->add_option("--config", ev_config, "JSON config file (flags override)");
  eval->add_option("--dataset", ev_dataset, "cube | afacontext | path to CSV");
  eval->add_option("--method", ev_methods, "policy ids (repeatable)");
  eval->add_option("--budget", ev_budgets, "budgets (repeatable; default: dataset presets)");
  eval->add_option("--seed", ev_seeds, "training seeds");
  eval->add_option("--split-seed", ev_splits, "dataset split seeds");
  eval->add_option("--label", ev_label, "label column (CSV datasets)");
  eval->add_option("--classes", ev_classes, "class count (CSV datasets)");
  eval->add_option("--mode", ev_mode, "shared | builtin");
  eval->add_option("--profile", ev_profile, "training scale: smoke | paper");
  eval->add_option("--jobs", ev_jobs, "max parallel cells (default: hardware)");

  // plot --------------------------------------------------------------------
  auto* plot = app.add_subcommand("plot", "render budget-curve SVGs from a results CSV");
  std::string plot_csv, plot_out = "plots";
  plot->add_option("--results", plot_csv, "aggregated results CSV")->required();
  plot->add_option("--out", plot_out, "output directory");

  // report --------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "render a markdown summary from results");
  std::string rep_out = "report.md";
  report->add_option("--out", rep_out, "output markdown path");

  CLI11_PARSE(app, argc, argv);
  const std::string workdir = resolve_workdir(workdir_flag);

  try {
    if (gen->parsed()) return run_generate(gen_dataset, gen_seed, gen_out);

    if (pre->parsed()) {
      afa::ExperimentConfig cfg;
      cfg.dataset = pre_dataset;
      cfg.csv_label = pre_label;
      cfg.csv_classes = pre_classes;
      cfg.workdir = workdir;
      cfg.scale = scale_from_profile(pre_profile);
      const afa::DatasetBundle data = afa::make_dataset(cfg, pre_split);
      const afa::SharedPredictor p = afa::shared_predictor_for(data, cfg.scale, workdir);
      std::cout << "shared predictor ready, weights fingerprint " << p.weights_fingerprint()
                << "\n";
      return 0;
    }

    if (train->parsed()) {
      afa::ExperimentConfig cfg;
      cfg.dataset = tr_dataset;
      cfg.csv_label = tr_label;
      cfg.csv_classes = tr_classes;
      cfg.method = tr_method;
      cfg.budget = tr_budget;
      cfg.mode = tr_mode == "builtin" ? afa::ClassifierMode::builtin
                                      : afa::ClassifierMode::shared;
      cfg.seeds = {tr_seed};
      cfg.splits = {tr_split};
      cfg.scale = scale_from_profile(tr_profile);
      cfg.workdir = workdir;
      const afa::ExperimentResult res = afa::run_experiment(cfg);
      const afa::CellResult& cell = res.cells.front();
      std::cout << tr_method << " on " << tr_dataset << " b=" << tr_budget << ": terminal "
                << afa::to_string(res.curve.kind) << " " << cell.step_metric.back() << " ("
                << cell.train_seconds << "s train, " << cell.eval_seconds << "s eval)\n";
      return 0;
    }

    if (eval->parsed()) {
      afa::ExperimentConfig base;
      if (!ev_config.empty()) {
        std::ifstream f(ev_config);
        if (!f) throw std::runtime_error("cannot open config " + ev_config);
        nlohmann::json j;
        f >> j;
        base = afa::ExperimentConfig::from_json(j);
      }
      // flags override the config file
      if (eval->count("--dataset") || ev_config.empty()) base.dataset = ev_dataset;
      if (eval->count("--label")) base.csv_label = ev_label;
      if (eval->count("--classes")) base.csv_classes = ev_classes;
      if (eval->count("--mode") || ev_config.empty())
        base.mode = ev_mode == "builtin" ? afa::ClassifierMode::builtin
                                         : afa::ClassifierMode::shared;
      if (eval->count("--seed")) base.seeds = ev_seeds;
      if (eval->count("--split-seed")) base.splits = ev_splits;
      if (eval->count("--profile") || ev_config.empty())
        base.scale = scale_from_profile(ev_profile);
      base.workdir = workdir;

      std::vector<std::string> methods = ev_methods;
      if (methods.empty()) {
        if (base.method.empty()) throw std::runtime_error("no methods requested");
        methods = {base.method};
      }
      std::vector<int> budgets = ev_budgets;
      if (budgets.empty()) {
        if (base.budget > 0 && !ev_config.empty())
          budgets = {base.budget};
        else
          budgets = afa::budget_presets(base.dataset);
      }

      std::vector<afa::ExperimentConfig> cells;
      for (const auto& m : methods)
        for (const int b : budgets) {
          afa::ExperimentConfig c = base;
          c.method = m;
          c.budget = b;
          cells.push_back(c);
        }

      const unsigned jobs = ev_jobs > 0 ? static_cast<unsigned>(ev_jobs)
                                        : std::max(1u, std::thread::hardware_concurrency());
      std::vector<afa::CellResult> all;
      bool any_failed = false;
      for (std::size_t start = 0; start < cells.size(); start += jobs) {
        const std::size_t end = std::min(cells.size(), start + jobs);
        std::vector<std::future<afa::ExperimentResult>> futs;
        for (std::size_t i = start; i < end; ++i)
          futs.push_back(std::async(std::launch::async,
                                    [&cells, i] { return afa::run_experiment(cells[i]); }));
        for (std::size_t i = start; i < end; ++i) {
          try {
            afa::ExperimentResult r = futs[i - start].get();
            all.insert(all.end(), r.cells.begin(), r.cells.end());
            std::cout << cells[i].method << " " << cells[i].dataset << " b=" << cells[i].budget
                      << " terminal mean " << r.curve.mean.back() << " ± "
                      << r.curve.stddev.back() << "\n";
          } catch (const std::exception& e) {
            std::cerr << "cell failed (" << cells[i].method << ", b=" << cells[i].budget
                      << "): " << e.what() << "\n";
            any_failed = true;
          }
        }
      }
      const auto rows = afa::aggregate_cells(all);
      fs::create_directories(workdir);
      afa::write_results_csv(rows, workdir + "/results.csv");
      std::cout << "aggregated results: " << workdir << "/results.csv\n";
      return any_failed ? 1 : 0;
    }

    if (plot->parsed()) {
      const auto rows = afa::read_results_csv(plot_csv);
      const auto written = afa::write_budget_svgs(rows, plot_out);
      for (const auto& p : written) std::cout << "wrote " << p << "\n";
      return 0;
    }

    if (report->parsed()) {
      const auto cells = afa::load_cells(workdir + "/results");
      if (cells.empty()) throw std::runtime_error("no result cells under " + workdir + "/results");
      std::ofstream f(rep_out);
      if (!f) throw std::runtime_error("cannot open " + rep_out);
      f << afa::render_report(cells);
      std::cout << "wrote " << rep_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
