#pragma once

#include <array>
#include <string>
#include <vector>

#include "traj/quality.hpp"

namespace traj {

// Displacement metrics over K candidate trajectories. "Best" is always the
// mode with the minimum endpoint error; ties go to the lower mode index.
int best_mode_by_endpoint(const std::vector<Mat>& modes, const Mat& gt);
double min_ade(const std::vector<Mat>& modes, const Mat& gt);
double min_fde(const std::vector<Mat>& modes, const Mat& gt);

// Fraction of scenarios whose min_fde strictly exceeds the threshold.
double miss_rate(const std::vector<double>& min_fdes, double threshold = 2.0);

struct ScenarioEval {
  std::string id;
  int iterations_used = 0;
  std::vector<double> mode_fde;      // final per-mode endpoint errors
  std::vector<double> score_trace;   // predicted scalar scores per iteration
  std::vector<double> label_trace;   // ground-truth quality labels per iteration
  std::vector<double> min_fde_trace; // per-iteration min_fde (fixed mode)
  std::vector<double> min_ade_trace; // per-iteration min_ade (fixed mode)
  double final_min_ade = 0.0;
  double final_min_fde = 0.0;
};

struct IterationMetrics {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss_rate = 0.0;
};

struct EvalReport {
  std::string mode;  // "fixed" or "adaptive"
  int iterations = 0;
  std::vector<IterationMetrics> per_iteration;  // fixed mode: entries 0..I
  IterationMetrics final_metrics;
  double mean_iterations = 0.0;
  std::vector<ScenarioEval> records;
};

// Fixed-I evaluation of one scenario: runs the backbone plus exactly
// `iterations` refinement passes, recording per-iteration metrics, predicted
// scores, and quality labels.
ScenarioEval eval_scenario_fixed(const Backbone& backbone, const RefineModel& refine,
                                 const ScoreModel& score, const ParameterStore& store,
                                 const Scenario& scenario, int iterations);

// Adaptive evaluation of one scenario via the quality-score controller.
ScenarioEval eval_scenario_adaptive(const Backbone& backbone, const RefineModel& refine,
                                    const ScoreModel& score, const ParameterStore& store,
                                    const Scenario& scenario, const InferenceConfig& cfg);

// Dataset-level runs. The serial version is the reference implementation;
// the parallel version fans scenarios out over an OpenMP worker pool and
// must produce identical records and aggregates for any job count.
EvalReport eval_dataset_serial(const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, const ParameterStore& store,
                               const std::vector<Scenario>& scenarios, const std::string& mode,
                               int iterations, const InferenceConfig& icfg);
EvalReport eval_dataset_parallel(const Backbone& backbone, const RefineModel& refine,
                                 const ScoreModel& score, const ParameterStore& store,
                                 const std::vector<Scenario>& scenarios, const std::string& mode,
                                 int iterations, const InferenceConfig& icfg, int jobs);

// Quality-score distribution analysis over fixed-mode records:
// per-iteration 10-bin histograms of the labels plus migration statistics.
struct ScoreDistribution {
  std::vector<std::array<int, 10>> histograms;  // [iteration][bin]
  double frac_low_improved = 0.0;   // of scenarios with q_0 < 0.2: final q > q_0
  double frac_high_worsened = 0.0;  // of scenarios with q_0 > 0.8: final q < q_0
  double frac_high_initial = 0.0;   // scenarios with q_0 >= 0.8
  double frac_high_final = 0.0;     // scenarios with final q >= 0.8
};

ScoreDistribution score_distribution(const std::vector<ScenarioEval>& records);

// Report emission: JSON summary, per-scenario CSV, histogram CSV.
void write_eval_report(const EvalReport& report, const std::string& out_dir);
std::vector<ScenarioEval> read_per_scenario_csv(const std::string& path);

}  // namespace traj
