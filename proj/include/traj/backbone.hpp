#pragma once

#include <vector>

#include "traj/graph.hpp"
#include "traj/nn.hpp"
#include "traj/scenario.hpp"

namespace traj {

// K multimodal trajectories in the target agent's t=0 frame, simplex
// probabilities, and per-mode trajectory embeddings.
struct PredictionSet {
  std::vector<Mat> trajectories;     // K entries of (T_f x 2)
  std::vector<double> probabilities; // K, sums to 1
  std::vector<Mat> embeddings;       // K entries of (1 x D)
};

struct BackboneConfig {
  int t_h = 20;
  int t_f = 30;
  int hidden = 128;  // D_backbone
  int k_modes = 6;
  int n_heads = 8;
  double dropout = 0.1;
};

// Graph handles of one backbone forward pass.
struct BackboneVars {
  std::vector<VarId> traj;  // per mode (T_f x 2)
  std::vector<VarId> emb;   // per mode (1 x hidden)
  VarId prob;               // (1 x K)
};

// First-stage predictor: agent-centric scene encoding (history MLP + one
// cross-attention over map/agent tokens) and K parallel trajectory heads.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg) {}

  const BackboneConfig& config() const { return cfg_; }

  void init_params(ParameterStore& store, Rng& rng) const;

  // `scenario` in world coordinates; all inputs are re-expressed in the
  // target agent's t=0 frame before encoding. Throws if the scenario's
  // horizons do not match the configured ones.
  BackboneVars forward(Tape& t, const ParameterStore& store, const Scenario& scenario,
                       bool train) const;

  static PredictionSet extract(const Tape& t, const BackboneVars& v);

 private:
  BackboneConfig cfg_;
};

// Ground-truth future expressed in the target frame, as a (T_f x 2) matrix.
Mat future_in_target_frame(const Scenario& s);

}  // namespace traj
