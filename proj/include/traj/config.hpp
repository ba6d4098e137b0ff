#pragma once

#include <string>
#include <vector>

#include "traj/backbone.hpp"
#include "traj/quality.hpp"
#include "traj/refine.hpp"
#include "traj/scenario.hpp"
#include "traj/training.hpp"

namespace traj {

struct EvalConfig {
  std::string mode = "fixed";  // "fixed" | "adaptive"
  int iterations = 5;
  int jobs = 1;
};

struct PathsConfig {
  std::string data_dir;
  std::string out_dir;
};

// One JSON file with nested sections; unknown keys are rejected, defaults
// carry the stock hyperparameters.
struct RunConfig {
  uint64_t seed = 1;
  GeneratorConfig generator;
  BackboneConfig backbone;  // t_h/t_f are mirrored from the generator section
  RefineConfig refine;
  InferenceConfig inference;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;
};

RunConfig default_config();

// Load + validate, applying `--set section.key=value` overrides (values are
// parsed as JSON scalars, falling back to strings).
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});

std::string config_to_json_text(const RunConfig& cfg);

}  // namespace traj
