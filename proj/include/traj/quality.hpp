#pragma once

#include <functional>
#include <vector>

#include "traj/graph.hpp"
#include "traj/nn.hpp"
#include "traj/refine.hpp"

namespace traj {

// Per-iteration quality labels: q_i = (d_max - d_i) / (d_max - d_min),
// all 1 when the range is degenerate (< 1e-6). Errors must be >= 0.
std::vector<double> quality_labels(const std::vector<double>& errors);

struct InferenceConfig {
  double q_bar = 0.5;     // score threshold
  int max_iterations = 5; // I'
};

void validate_inference_config(const InferenceConfig& cfg);

// GRU over per-iteration embedding snapshots followed by an MLP head and a
// sigmoid, one score per mode.
class ScoreModel {
 public:
  explicit ScoreModel(int hidden = 64) : hidden_(hidden) {}

  void init_params(ParameterStore& store, Rng& rng) const;

  // snapshots[t] holds the K per-mode embeddings (1 x hidden) after
  // iteration t; snapshots[0] is the compressed backbone embedding.
  // Returns a (1 x K) row of scores in (0,1).
  VarId decode(Tape& t, const ParameterStore& store,
               const std::vector<std::vector<VarId>>& snapshots) const;

 private:
  int hidden_;
};

enum class StopReason { kSkippedHighScore, kScoreDrop, kMaxIterations };

struct AdaptiveOutcome {
  int iterations_used = 0;
  StopReason reason = StopReason::kMaxIterations;
  std::vector<double> score_trace;  // q_hat_0 .. q_hat_last
};

// The adaptive-iteration control flow, decoupled from the model so the three
// exits can be driven by scripted score traces: skip when q0 > q_bar, stop
// (keeping the current iteration's output) when the score drops, otherwise
// run max_iterations. `refine_step(i)` performs iteration i and returns its
// score.
AdaptiveOutcome run_adaptive(double initial_score,
                             const std::function<double(int)>& refine_step,
                             const InferenceConfig& cfg);

struct AdaptiveResult {
  PredictionSet prediction;
  int iterations_used = 0;
  StopReason reason = StopReason::kMaxIterations;
  std::vector<double> score_trace;
};

// Algorithm-level adaptive inference: backbone, initial score, then up to
// max_iterations refinement passes with early exits. The decision score at
// each iteration is the predicted score of the highest-probability mode.
AdaptiveResult adaptive_infer(const Backbone& backbone, const RefineModel& refine,
                              const ScoreModel& score, const ParameterStore& store,
                              const Scenario& scenario, const InferenceConfig& cfg);

}  // namespace traj
