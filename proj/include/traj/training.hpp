#pragma once

#include <string>
#include <vector>

#include "traj/metrics.hpp"
#include "traj/quality.hpp"

namespace traj {

struct TrainConfig {
  double alpha = 0.01;  // score-loss balance
  int iterations = 5;   // fixed refinement iterations I during training
  int epochs = 32;
  int batch_size = 8;
  double lr0 = 0.001;
  double weight_decay = 0.0001;
  uint64_t seed = 1;
  bool freeze_backbone = false;
  bool stop_gradient = false;       // detach trajectory/embeddings between iterations
  bool reg_all_iterations = false;  // regression loss on every iteration, not just the last
  int jobs = 1;
};

void validate_train_config(const TrainConfig& cfg);

// Loss pieces -----------------------------------------------------------

// Cross-entropy against the best mode: -log p[best] (clamped at 1e-12).
VarId loss_cls(Tape& t, VarId probabilities, int best_mode);

// Laplace negative log-likelihood of the ground truth under the best mode.
VarId loss_reg(Tape& t, VarId mu, VarId scales, const Mat& ground_truth);

// Mean L1 between the best mode's predicted scores and the labels
// (score_rows[i] is the (1 x K) score row of iteration i).
VarId loss_score(Tape& t, const std::vector<VarId>& score_rows, int best_mode,
                 const std::vector<double>& labels);

// One scenario's full unrolled training forward: backbone, compressor, I
// refinement iterations, per-iteration score decoding, Eq.-style labels and
// the combined loss.
struct ForwardResult {
  VarId total = -1;
  VarId cls = -1;
  VarId reg = -1;
  VarId score = -1;
  std::vector<double> errors;  // d_0 .. d_I (best-mode endpoint error per iteration)
  std::vector<double> labels;
  int best_mode = 0;
};

ForwardResult training_forward(Tape& t, const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, const ParameterStore& store,
                               const Scenario& scenario, const TrainConfig& cfg);

// Training loop ----------------------------------------------------------

struct TrainLogRow {
  int epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  double loss_score = 0.0;
};

// Joint training of all three parameter groups with AdamW and a cosine
// schedule. Writes one checkpoint per epoch plus metrics.csv when `out_dir`
// is non-empty. `start_epoch` > 0 resumes a loaded store mid-run (the
// schedule and shuffling are derived from (seed, epoch), so a resumed run
// reproduces the uninterrupted one exactly).
std::vector<TrainLogRow> train(const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, ParameterStore& store,
                               const std::vector<Scenario>& dataset, const TrainConfig& cfg,
                               const std::string& out_dir, int start_epoch = 0);

}  // namespace traj
