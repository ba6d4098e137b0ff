#pragma once

#include <string>
#include <vector>

#include "traj/config.hpp"

namespace traj {

// Command implementations behind the CLI. All throw on error; the CLI turns
// exceptions into a nonzero exit status and marks partial output directories
// with a FAILED file.

// Generate a dataset; prints the scenario count and maneuver mix.
void cmd_generate(const RunConfig& cfg, const std::string& out_path);

// Train on a dataset; writes per-epoch checkpoints and metrics.csv.
// `resume_checkpoint` restarts after the stored epoch.
void cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& out_dir,
               const std::string& resume_checkpoint = "");

// Evaluate a checkpoint (mode from cfg.eval.mode); writes summary.json and
// per_scenario.csv.
void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& dataset_path, const std::string& out_dir);

// Score-distribution and ablation analysis over one or more eval output
// directories; writes histogram/migration CSVs and an ablation table.
void cmd_analyze(const std::vector<std::string>& eval_dirs, const std::string& out_dir);

// Shared model bundle construction (also used by tests and tools).
struct ModelBundle {
  Backbone backbone;
  RefineModel refine;
  ScoreModel score;
};

ModelBundle make_models(const RunConfig& cfg);
ParameterStore init_store(const RunConfig& cfg);

// Checkpoint/config compatibility check: every expected parameter exists
// with the expected shape.
void check_checkpoint_compatible(const RunConfig& cfg, const ParameterStore& store);

}  // namespace traj
