#include "traj/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "json.hpp"

namespace traj {

namespace fs = std::filesystem;

ModelBundle make_models(const RunConfig& cfg) {
  return ModelBundle{Backbone(cfg.backbone), RefineModel(cfg.refine, cfg.generator.t_f),
                     ScoreModel(cfg.refine.hidden)};
}

ParameterStore init_store(const RunConfig& cfg) {
  const ModelBundle models = make_models(cfg);
  ParameterStore store;
  Rng rng = Rng::derive(cfg.seed, 0x1A17);
  models.backbone.init_params(store, rng);
  models.refine.init_params(store, rng);
  models.score.init_params(store, rng);
  return store;
}

void check_checkpoint_compatible(const RunConfig& cfg, const ParameterStore& store) {
  const ParameterStore expected = init_store(cfg);
  for (const auto& [name, m] : expected.params()) {
    if (!store.has(name)) {
      throw std::runtime_error("checkpoint incompatible with config: missing parameter '" + name +
                               "'");
    }
    const Mat& got = store.get(name);
    if (!got.same_shape(m)) {
      throw std::runtime_error("checkpoint incompatible with config: parameter '" + name +
                               "' has shape " + shape_str(got) + ", expected " + shape_str(m));
    }
  }
}

void cmd_generate(const RunConfig& cfg, const std::string& out_path) {
  const std::vector<Scenario> scenarios = generate(cfg.generator);
  const std::string tmp = out_path + ".tmp";
  write_dataset(scenarios, tmp);
  fs::rename(tmp, out_path);

  std::map<std::string, int> mix;
  for (const auto& s : scenarios) {
    const size_t us = s.id.rfind('_');
    mix[us == std::string::npos ? "?" : s.id.substr(us + 1)]++;
  }
  std::cout << "wrote " << scenarios.size() << " scenarios to " << out_path << " (";
  bool first = true;
  for (const auto& [label, count] : mix) {
    std::cout << (first ? "" : ", ") << label << ": " << count;
    first = false;
  }
  std::cout << ")\n";
}

namespace {

void check_dataset_horizons(const RunConfig& cfg, const std::vector<Scenario>& data) {
  if (data.empty()) throw std::runtime_error("dataset is empty");
  if (data[0].t_h != cfg.generator.t_h || data[0].t_f != cfg.generator.t_f) {
    throw std::runtime_error("dataset horizon (" + std::to_string(data[0].t_h) + "," +
                             std::to_string(data[0].t_f) + ") does not match config (" +
                             std::to_string(cfg.generator.t_h) + "," +
                             std::to_string(cfg.generator.t_f) + ")");
  }
}

}  // namespace

void cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& out_dir,
               const std::string& resume_checkpoint) {
  const std::vector<Scenario> data = read_dataset(dataset_path);
  check_dataset_horizons(cfg, data);

  const ModelBundle models = make_models(cfg);
  ParameterStore store;
  int start_epoch = 0;
  if (resume_checkpoint.empty()) {
    store = init_store(cfg);
  } else {
    int64_t epoch = 0;
    store = load_checkpoint(resume_checkpoint, &epoch);
    check_checkpoint_compatible(cfg, store);
    start_epoch = static_cast<int>(epoch) + 1;
  }

  train(models.backbone, models.refine, models.score, store, data, cfg.train, out_dir,
        start_epoch);
  std::cout << "trained " << cfg.train.epochs - start_epoch << " epoch(s) on " << data.size()
            << " scenarios; checkpoints in " << out_dir << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& dataset_path, const std::string& out_dir) {
  const std::vector<Scenario> data = read_dataset(dataset_path);
  check_dataset_horizons(cfg, data);

  const ModelBundle models = make_models(cfg);
  const ParameterStore store = load_checkpoint(checkpoint_path);
  check_checkpoint_compatible(cfg, store);

  const EvalReport report =
      cfg.eval.jobs == 1
          ? eval_dataset_serial(models.backbone, models.refine, models.score, store, data,
                                cfg.eval.mode, cfg.eval.iterations, cfg.inference)
          : eval_dataset_parallel(models.backbone, models.refine, models.score, store, data,
                                  cfg.eval.mode, cfg.eval.iterations, cfg.inference,
                                  cfg.eval.jobs);
  write_eval_report(report, out_dir);
  std::cout << "evaluated " << data.size() << " scenarios (" << report.mode
            << "): min_ade=" << report.final_metrics.min_ade
            << " min_fde=" << report.final_metrics.min_fde
            << " miss_rate=" << report.final_metrics.miss_rate;
  if (report.mode == "adaptive") std::cout << " mean_iterations=" << report.mean_iterations;
  std::cout << "\n";
}

void cmd_analyze(const std::vector<std::string>& eval_dirs, const std::string& out_dir) {
  if (eval_dirs.empty()) throw std::invalid_argument("analyze: no eval directories given");

  // Everything required must exist before any output is written.
  std::vector<std::string> missing;
  for (const auto& dir : eval_dirs) {
    for (const char* f : {"/summary.json", "/per_scenario.csv"}) {
      if (!fs::exists(dir + f)) missing.push_back(dir + f);
    }
  }
  if (!missing.empty()) {
    std::string msg = "analyze: missing required files:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  fs::create_directories(out_dir);

  // Ablation table: one row per metric, one column per run.
  std::vector<std::string> labels;
  std::vector<nlohmann::json> summaries;
  for (const auto& dir : eval_dirs) {
    labels.push_back(fs::path(dir).filename().string());
    std::ifstream in(dir + "/summary.json");
    nlohmann::json j;
    in >> j;
    summaries.push_back(std::move(j));
  }
  {
    std::ofstream tab(out_dir + "/ablation.csv", std::ios::trunc);
    if (!tab) throw std::runtime_error("cannot write " + out_dir + "/ablation.csv");
    tab << "metric";
    for (const auto& l : labels) tab << "," << l;
    tab << "\n";
    for (const char* metric : {"min_ade", "min_fde", "miss_rate"}) {
      tab << metric;
      for (const auto& s : summaries) tab << "," << s.at("final").at(metric).get<double>();
      tab << "\n";
    }
    tab << "mean_iterations";
    for (const auto& s : summaries) tab << "," << s.at("mean_iterations").get<double>();
    tab << "\n";
  }

  // Score-distribution outputs per run that carries quality labels.
  for (size_t d = 0; d < eval_dirs.size(); ++d) {
    const std::vector<ScenarioEval> records = read_per_scenario_csv(eval_dirs[d] + "/per_scenario.csv");
    if (records.empty() || records[0].label_trace.empty()) continue;
    const ScoreDistribution dist = score_distribution(records);

    std::ofstream hist(out_dir + "/histograms_" + labels[d] + ".csv", std::ios::trunc);
    hist << "iteration,bin_lo,bin_hi,count\n";
    for (size_t i = 0; i < dist.histograms.size(); ++i) {
      for (int b = 0; b < 10; ++b) {
        hist << i << "," << b / 10.0 << "," << (b + 1) / 10.0 << ","
             << dist.histograms[i][static_cast<size_t>(b)] << "\n";
      }
    }

    std::ofstream mig(out_dir + "/migration_" + labels[d] + ".csv", std::ios::trunc);
    mig << "stat,value\n";
    mig << "frac_low_improved," << dist.frac_low_improved << "\n";
    mig << "frac_high_worsened," << dist.frac_high_worsened << "\n";
    mig << "frac_high_initial," << dist.frac_high_initial << "\n";
    mig << "frac_high_final," << dist.frac_high_final << "\n";
  }
  std::cout << "analysis written to " << out_dir << "\n";
}

}  // namespace traj
