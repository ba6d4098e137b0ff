#pragma once

#include <string>
#include <vector>

#include "traj/backbone.hpp"
#include "traj/graph.hpp"
#include "traj/nn.hpp"
#include "traj/scenario.hpp"

namespace traj {

enum class RadiusMode { kAdaptiveExp, kAdaptiveLinear, kFixed };

struct RefineConfig {
  int n_anchors = 0;  // 0 = adapt to horizon: max(1, ceil(t_f / 15))
  double beta = 0.8;  // radius decay constant, meters per (m/s)
  double r_min = 2.0;
  double r_max = 10.0;
  int hidden = 64;
  int n_heads = 8;
  int max_context = 128;  // retrieval cap per anchor
  double dropout = 0.1;
  int d_backbone = 128;
  RadiusMode radius_mode = RadiusMode::kAdaptiveExp;
  double fixed_radius = 10.0;
  bool anchor_centric = true;  // false: agent-centric context encoding ablation
};

void validate_refine_config(const RefineConfig& cfg, int t_f);
int anchors_for_horizon(int t_f, const RefineConfig& cfg);

// A pose on a predicted trajectory at a segment endpoint. Steps are 1-based
// (step s lives at trajectory row s-1); the segment covers steps
// (start_step, end_step], i.e. rows [start_step, end_step).
struct Anchor {
  Pose2 pose;
  double speed = 0.0;  // segment-average, m/s
  int start_step = 0;
  int end_step = 0;
};

// Splits the trajectory into n segments at boundaries floor(k*T_f/n) and
// builds one anchor per segment endpoint. Degenerate (coincident) segments
// yield heading 0 and speed 0.
std::vector<Anchor> select_anchors(const Mat& trajectory, int n, double dt = kStepDt);

// Adaptive retrieval radius for refinement iteration i >= 1 and segment
// speed v. Exponential mode: clamp(beta * 0.5^(i-1) * v, r_min, r_max).
// Linear mode interpolates the decay factor evenly from beta to
// beta * 0.5^(I-1) across `total_iterations`. Fixed mode returns
// cfg.fixed_radius as-is.
double retrieval_radius(int iteration, double speed, const RefineConfig& cfg,
                        int total_iterations = 1);

// One retrievable scene point (map point or surrounding-agent waypoint),
// in the same frame the index was built in.
struct ScenePoint {
  Vec2 position;
  int semantic = 0;
  int kind = 0;    // 0 = map point, 1 = agent waypoint
  int source = 0;  // polyline / agent index
  int point = 0;   // index within the polyline / history
};

// Uniform grid over scene points, cell size = r_max. Radius queries return
// exactly the set a naive scan would (ties broken by (dist, kind, source,
// point)), truncated nearest-first at the cap.
class SceneIndex {
 public:
  SceneIndex(const Scenario& scenario, double cell_size);

  std::vector<int> query(Vec2 center, double radius, int cap) const;
  int nearest_map_point(Vec2 center) const;
  const std::vector<ScenePoint>& points() const { return pts_; }

 private:
  std::vector<int> cell_points(int cx, int cy) const;

  std::vector<ScenePoint> pts_;
  double cell_ = 1.0;
  double min_x_ = 0.0, min_y_ = 0.0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<int32_t>> cells_;
};

// A retrieved context element expressed in the anchor frame.
struct ContextElement {
  Vec2 position;  // anchor-frame coordinates
  int semantic = 0;
  double dist = 0.0;  // Euclidean distance to the anchor
  int kind = 0;
  int source = 0;
  int point = 0;
  int index = 0;  // position in SceneIndex::points()
};

// All scene points within `radius` of the anchor (nearest `cap` if more),
// expressed in the anchor frame. Falls back to the single nearest map point
// when the radius captures nothing.
std::vector<ContextElement> retrieve_context(const SceneIndex& index, const Anchor& anchor,
                                             double radius, int cap);

// Graph handles of the refinement state for one scenario.
struct RefineVars {
  std::vector<VarId> traj;    // K of (T_f x 2), target frame
  std::vector<VarId> emb;     // K of (1 x hidden)
  std::vector<VarId> scales;  // K of (T_f x 2), valid once iteration >= 1
  VarId prob = -1;            // (1 x K)
  int iteration = 0;          // completed refinement iterations
};

// The refinement network: compressor, per-component context encoders with
// additive fusion, one cross-attention layer per segment, offset/scale
// heads, and a probability head.
class RefineModel {
 public:
  RefineModel(const RefineConfig& cfg, int t_f);

  const RefineConfig& config() const { return cfg_; }
  int n_anchors() const { return n_anchors_; }

  void init_params(ParameterStore& store, Rng& rng) const;

  // Backbone embeddings (1 x d_backbone each) -> (1 x hidden each).
  std::vector<VarId> compress(Tape& t, const ParameterStore& store,
                              const std::vector<VarId>& emb) const;

  // Anchor-centric context encoding: one (n x hidden) embedding matrix for a
  // set of context elements around `anchor_pose_vars` (see below).
  struct AnchorFrameVars {
    VarId position = -1;  // 1x2 anchor position (differentiable)
    VarId cos_h = -1;     // 1x1
    VarId sin_h = -1;     // 1x1
    bool degenerate = false;
  };

  // One recurrent refinement step: the mode's embedding attends over the
  // anchor's encoded context, an offset head adjusts the segment's waypoints
  // (predicted in the anchor frame, rotated back), and a scale head emits
  // Laplace scales for those waypoints.
  struct SegmentResult {
    VarId traj = -1;            // full trajectory with the segment adjusted
    VarId emb = -1;             // updated embedding (the next segment's query)
    VarId segment_scales = -1;  // (segment_len x 2) positive Laplace scales
  };
  // `anchor_source`, when >= 0, is the trajectory the anchor frame is read
  // from (the iteration's input trajectory); defaults to `traj`.
  SegmentResult refine_segment(Tape& t, const ParameterStore& store, const SceneIndex& scene,
                               VarId traj, VarId emb, const Anchor& anchor, double radius,
                               bool train, VarId anchor_source = -1) const;

  // One full refinement iteration over all modes and segments.
  // `iteration` is 1-based; `scene` must be expressed in the same (target)
  // frame as the trajectories.
  RefineVars refine_iteration(Tape& t, const ParameterStore& store, const SceneIndex& scene,
                              const RefineVars& state, int iteration, int total_iterations,
                              bool train) const;

  // Probability head + softmax over modes (used for the initial embeddings
  // too, so every RefineVars carries a simplex).
  VarId decode_probabilities(Tape& t, const ParameterStore& store,
                             const std::vector<VarId>& emb) const;

 private:
  VarId encode_context_set(Tape& t, const ParameterStore& store, VarId positions, VarId semantics,
                           VarId dists) const;

  RefineConfig cfg_;
  int t_f_;
  int n_anchors_;
  int max_seg_len_;
};

// Scenario re-expressed in the target agent's t=0 frame (the frame all
// refinement runs in).
Scenario scenario_in_target_frame(const Scenario& s);

}  // namespace traj
