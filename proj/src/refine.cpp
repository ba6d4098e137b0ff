#include "traj/refine.hpp"

#include <algorithm>
#include <cmath>

namespace traj {

void validate_refine_config(const RefineConfig& cfg, int t_f) {
  if (cfg.beta <= 0.0) throw std::invalid_argument("refine config: beta must be > 0");
  if (cfg.r_min <= 0.0 || cfg.r_min > cfg.r_max) {
    throw std::invalid_argument("refine config: need 0 < r_min <= r_max");
  }
  if (cfg.hidden % cfg.n_heads != 0) {
    throw std::invalid_argument("refine config: hidden not divisible by n_heads");
  }
  if (cfg.max_context < 1) throw std::invalid_argument("refine config: max_context must be >= 1");
  const int n = anchors_for_horizon(t_f, cfg);
  if (n < 1 || n > t_f) {
    throw std::invalid_argument("refine config: n_anchors must be in [1, t_f]");
  }
}

int anchors_for_horizon(int t_f, const RefineConfig& cfg) {
  if (cfg.n_anchors > 0) return cfg.n_anchors;
  return std::max(1, (t_f + 14) / 15);
}

std::vector<Anchor> select_anchors(const Mat& trajectory, int n, double dt) {
  const int t_f = trajectory.rows;
  if (n < 1 || n > t_f) {
    throw std::invalid_argument("select_anchors: n must be in [1, " + std::to_string(t_f) + "]");
  }
  if (trajectory.cols != 2) {
    throw std::invalid_argument("select_anchors: trajectory must be (T_f x 2)");
  }
  auto point_at = [&](int step) -> Vec2 {  // step 0 = current position = frame origin
    if (step == 0) return {0.0, 0.0};
    return {trajectory.at(step - 1, 0), trajectory.at(step - 1, 1)};
  };

  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<size_t>(n));
  int prev_boundary = 0;
  for (int k = 1; k <= n; ++k) {
    const int boundary = static_cast<int>((static_cast<int64_t>(k) * t_f) / n);
    Anchor a;
    a.start_step = prev_boundary;
    a.end_step = boundary;

    const Vec2 pos = point_at(boundary);
    const Vec2 disp = pos - point_at(boundary - 1);
    const double heading = norm(disp) < 1e-6 ? 0.0 : std::atan2(disp.y, disp.x);
    a.pose = make_pose(pos.x, pos.y, heading);

    double path_len = 0.0;
    for (int s = prev_boundary + 1; s <= boundary; ++s) {
      path_len += distance(point_at(s), point_at(s - 1));
    }
    a.speed = path_len / (static_cast<double>(boundary - prev_boundary) * dt);

    anchors.push_back(a);
    prev_boundary = boundary;
  }
  return anchors;
}

double retrieval_radius(int iteration, double speed, const RefineConfig& cfg,
                        int total_iterations) {
  if (iteration < 1) throw std::invalid_argument("retrieval_radius: iteration must be >= 1");
  if (speed < 0.0) throw std::invalid_argument("retrieval_radius: speed must be >= 0");
  switch (cfg.radius_mode) {
    case RadiusMode::kFixed:
      return cfg.fixed_radius;
    case RadiusMode::kAdaptiveLinear: {
      const double f_last = cfg.beta * std::pow(0.5, std::max(total_iterations, 1) - 1);
      const double steps = std::max(total_iterations - 1, 1);
      const double f = cfg.beta + (iteration - 1) * (f_last - cfg.beta) / steps;
      return std::clamp(f * speed, cfg.r_min, cfg.r_max);
    }
    case RadiusMode::kAdaptiveExp:
      break;
  }
  const double f = cfg.beta * std::pow(0.5, iteration - 1);
  return std::clamp(f * speed, cfg.r_min, cfg.r_max);
}

// ------------------------------------------------------------------ retrieval

SceneIndex::SceneIndex(const Scenario& scenario, double cell_size) : cell_(cell_size) {
  if (scenario.map.empty()) throw std::invalid_argument("scene index: scenario map is empty");
  if (cell_ <= 0.0) throw std::invalid_argument("scene index: cell size must be > 0");
  for (size_t li = 0; li < scenario.map.size(); ++li) {
    const auto& line = scenario.map[li];
    for (size_t pi = 0; pi < line.points.size(); ++pi) {
      pts_.push_back({line.points[pi], line.semantic, 0, static_cast<int>(li), static_cast<int>(pi)});
    }
  }
  for (size_t ai = 0; ai < scenario.others.size(); ++ai) {
    const auto& o = scenario.others[ai];
    for (size_t pi = 0; pi < o.history.size(); ++pi) {
      pts_.push_back({o.history[pi], o.semantic, 1, static_cast<int>(ai), static_cast<int>(pi)});
    }
  }

  min_x_ = pts_[0].position.x;
  min_y_ = pts_[0].position.y;
  double max_x = min_x_, max_y = min_y_;
  for (const auto& p : pts_) {
    min_x_ = std::min(min_x_, p.position.x);
    min_y_ = std::min(min_y_, p.position.y);
    max_x = std::max(max_x, p.position.x);
    max_y = std::max(max_y, p.position.y);
  }
  nx_ = static_cast<int>((max_x - min_x_) / cell_) + 1;
  ny_ = static_cast<int>((max_y - min_y_) / cell_) + 1;
  cells_.assign(static_cast<size_t>(nx_) * ny_, {});
  for (size_t i = 0; i < pts_.size(); ++i) {
    const int cx = static_cast<int>((pts_[i].position.x - min_x_) / cell_);
    const int cy = static_cast<int>((pts_[i].position.y - min_y_) / cell_);
    cells_[static_cast<size_t>(cy) * nx_ + cx].push_back(static_cast<int32_t>(i));
  }
}

std::vector<int> SceneIndex::query(Vec2 center, double radius, int cap) const {
  const double r2 = radius * radius;
  const int cx0 = std::max(0, static_cast<int>(std::floor((center.x - radius - min_x_) / cell_)));
  const int cy0 = std::max(0, static_cast<int>(std::floor((center.y - radius - min_y_) / cell_)));
  const int cx1 = std::min(nx_ - 1, static_cast<int>(std::floor((center.x + radius - min_x_) / cell_)));
  const int cy1 = std::min(ny_ - 1, static_cast<int>(std::floor((center.y + radius - min_y_) / cell_)));

  std::vector<std::pair<double, int>> hits;  // (dist^2, point index)
  for (int cy = cy0; cy <= cy1; ++cy) {
    for (int cx = cx0; cx <= cx1; ++cx) {
      for (int32_t i : cells_[static_cast<size_t>(cy) * nx_ + cx]) {
        const Vec2 d = pts_[static_cast<size_t>(i)].position - center;
        const double d2 = d.x * d.x + d.y * d.y;
        if (d2 <= r2) hits.emplace_back(d2, i);
      }
    }
  }
  std::sort(hits.begin(), hits.end(), [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    const ScenePoint &pa = pts_[static_cast<size_t>(a.second)], &pb = pts_[static_cast<size_t>(b.second)];
    if (pa.kind != pb.kind) return pa.kind < pb.kind;
    if (pa.source != pb.source) return pa.source < pb.source;
    return pa.point < pb.point;
  });
  if (static_cast<int>(hits.size()) > cap) hits.resize(static_cast<size_t>(cap));
  std::vector<int> out;
  out.reserve(hits.size());
  for (const auto& [d2, i] : hits) out.push_back(i);
  return out;
}

int SceneIndex::nearest_map_point(Vec2 center) const {
  int best = -1;
  double best_d2 = 0.0;
  for (size_t i = 0; i < pts_.size(); ++i) {
    if (pts_[i].kind != 0) continue;
    const Vec2 d = pts_[i].position - center;
    const double d2 = d.x * d.x + d.y * d.y;
    if (best < 0 || d2 < best_d2) {
      best = static_cast<int>(i);
      best_d2 = d2;
    }
  }
  return best;
}

std::vector<ContextElement> retrieve_context(const SceneIndex& index, const Anchor& anchor,
                                             double radius, int cap) {
  if (radius <= 0.0) throw std::invalid_argument("retrieve_context: radius must be > 0");
  const Vec2 center{anchor.pose.x, anchor.pose.y};
  std::vector<int> ids = index.query(center, radius, cap);
  if (ids.empty()) ids.push_back(index.nearest_map_point(center));

  std::vector<ContextElement> out;
  out.reserve(ids.size());
  for (int i : ids) {
    const ScenePoint& p = index.points()[static_cast<size_t>(i)];
    ContextElement e;
    e.position = to_frame(anchor.pose, p.position);
    e.semantic = p.semantic;
    e.dist = norm(p.position - center);
    e.kind = p.kind;
    e.source = p.source;
    e.point = p.point;
    e.index = i;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------- refinement

RefineModel::RefineModel(const RefineConfig& cfg, int t_f) : cfg_(cfg), t_f_(t_f) {
  validate_refine_config(cfg, t_f);
  n_anchors_ = anchors_for_horizon(t_f, cfg);
  max_seg_len_ = (t_f + n_anchors_ - 1) / n_anchors_;
}

void RefineModel::init_params(ParameterStore& store, Rng& rng) const {
  const int h = cfg_.hidden;
  init_mlp2(store, rng, "refine/compress", cfg_.d_backbone, h, h);
  init_mlp2(store, rng, "refine/enc.pos", 2, h, h);
  init_mlp2(store, rng, "refine/enc.sem", 1, h, h);
  init_mlp2(store, rng, "refine/enc.dist", 1, h, h);
  init_mlp2(store, rng, "refine/fuse", h, h, h);
  init_attention(store, rng, "refine/attn", h);
  // Offset head starts at zero so the first iterations perturb gently.
  init_mlp2(store, rng, "refine/offset", h, h, 2 * max_seg_len_, /*zero_last=*/true);
  init_mlp2(store, rng, "refine/scale", h, h, 2 * max_seg_len_);
  init_mlp2(store, rng, "refine/prob", h, h, 1);
}

std::vector<VarId> RefineModel::compress(Tape& t, const ParameterStore& store,
                                         const std::vector<VarId>& emb) const {
  std::vector<VarId> out;
  out.reserve(emb.size());
  for (VarId e : emb) {
    if (t.val(e).cols != cfg_.d_backbone) {
      throw std::invalid_argument("compress: embedding width mismatch, expected " +
                                  std::to_string(cfg_.d_backbone) + ", actual " +
                                  std::to_string(t.val(e).cols));
    }
    out.push_back(mlp2(t, store, "refine/compress", e));
  }
  return out;
}

VarId RefineModel::encode_context_set(Tape& t, const ParameterStore& store, VarId positions,
                                      VarId semantics, VarId dists) const {
  if (t.val(positions).rows == 0) throw std::invalid_argument("encode_context: empty input");
  VarId z = t.add(t.add(mlp2(t, store, "refine/enc.pos", positions),
                        mlp2(t, store, "refine/enc.sem", semantics)),
                  mlp2(t, store, "refine/enc.dist", dists));
  return mlp2(t, store, "refine/fuse", z);
}

VarId RefineModel::decode_probabilities(Tape& t, const ParameterStore& store,
                                        const std::vector<VarId>& emb) const {
  std::vector<VarId> logits;
  logits.reserve(emb.size());
  for (VarId e : emb) logits.push_back(mlp2(t, store, "refine/prob", e));
  return t.softmax_rows(t.concat_cols(logits));
}

RefineModel::SegmentResult RefineModel::refine_segment(Tape& t, const ParameterStore& store,
                                                       const SceneIndex& scene, VarId traj,
                                                       VarId emb, const Anchor& anchor,
                                                       double radius, bool train,
                                                       VarId anchor_source) const {
  if (t.val(emb).cols != cfg_.hidden) {
    throw std::invalid_argument("refine_segment: embedding width mismatch, expected " +
                                std::to_string(cfg_.hidden) + ", actual " +
                                std::to_string(t.val(emb).cols));
  }
  const std::vector<ContextElement> elems = retrieve_context(scene, anchor, radius,
                                                             cfg_.max_context);
  const int n = static_cast<int>(elems.size());

  // Differentiable anchor frame built from the trajectory itself.
  const VarId src = anchor_source >= 0 ? anchor_source : traj;
  const int arow = anchor.end_step - 1;
  VarId apos = t.slice_rows(src, arow, arow + 1);
  VarId prev = arow >= 1 ? t.slice_rows(src, arow - 1, arow) : t.input(Mat(1, 2));
  VarId disp = t.sub(apos, prev);
  VarId cos_h, sin_h;
  const Mat& dv = t.val(disp);
  if (std::hypot(dv.d[0], dv.d[1]) < 1e-6) {
    cos_h = t.scalar_input(1.0);
    sin_h = t.scalar_input(0.0);
  } else {
    VarId heading = t.atan2_op(t.slice_cols(disp, 1, 2), t.slice_cols(disp, 0, 1));
    cos_h = t.cos_op(heading);
    sin_h = t.sin_op(heading);
  }

  Mat world(n, 2);
  Mat sems(n, 1);
  for (int i = 0; i < n; ++i) {
    const ScenePoint& sp = scene.points()[static_cast<size_t>(elems[static_cast<size_t>(i)].index)];
    world.at(i, 0) = sp.position.x;
    world.at(i, 1) = sp.position.y;
    sems.d[static_cast<size_t>(i)] =
        static_cast<double>(sp.kind == 0 ? sp.semantic : 4 + sp.semantic);
  }
  VarId world_in = t.input(std::move(world));
  VarId rel = t.add_row(world_in, t.scale(apos, -1.0));
  VarId dists = t.row_norm(rel);
  VarId local;
  if (cfg_.anchor_centric) {
    // to-frame rotation [ [c,-s], [s,c] ] applied to row vectors
    VarId rot_to = t.concat_rows({t.concat_cols({cos_h, t.scale(sin_h, -1.0)}),
                                  t.concat_cols({sin_h, cos_h})});
    local = t.matmul(rel, rot_to);
  } else {
    local = world_in;  // plain target-frame coordinates
  }
  VarId z = encode_context_set(t, store, local, t.input(std::move(sems)), dists);

  SegmentResult out;
  out.emb = t.add(emb, cross_attention(t, store, "refine/attn", emb, z, cfg_.n_heads,
                                       cfg_.dropout, train));

  const int seg_rows = anchor.end_step - anchor.start_step;
  VarId off_flat = t.slice_cols(mlp2(t, store, "refine/offset", out.emb), 0, 2 * seg_rows);
  VarId delta_local = t.reshape(off_flat, seg_rows, 2);
  // from-frame rotation [ [c,s], [-s,c] ] maps anchor-frame offsets back
  VarId rot_from = t.concat_rows({t.concat_cols({cos_h, sin_h}),
                                  t.concat_cols({t.scale(sin_h, -1.0), cos_h})});
  VarId delta = t.matmul(delta_local, rot_from);

  std::vector<VarId> parts;
  if (anchor.start_step > 0) parts.push_back(t.slice_rows(traj, 0, anchor.start_step));
  parts.push_back(t.add(t.slice_rows(traj, anchor.start_step, anchor.end_step), delta));
  if (anchor.end_step < t_f_) parts.push_back(t.slice_rows(traj, anchor.end_step, t_f_));
  out.traj = parts.size() == 1 ? parts[0] : t.concat_rows(parts);

  VarId scale_flat = t.slice_cols(mlp2(t, store, "refine/scale", out.emb), 0, 2 * seg_rows);
  out.segment_scales = t.add_const(t.softplus(t.reshape(scale_flat, seg_rows, 2)), 1e-3);
  return out;
}

RefineVars RefineModel::refine_iteration(Tape& t, const ParameterStore& store,
                                         const SceneIndex& scene, const RefineVars& state,
                                         int iteration, int total_iterations, bool train) const {
  if (state.iteration != iteration - 1) {
    throw std::invalid_argument("refine_iteration: state is at iteration " +
                                std::to_string(state.iteration) + ", expected " +
                                std::to_string(iteration - 1));
  }
  const int k_modes = static_cast<int>(state.traj.size());
  RefineVars next;
  next.iteration = iteration;
  next.traj.reserve(static_cast<size_t>(k_modes));
  next.emb.reserve(static_cast<size_t>(k_modes));
  next.scales.reserve(static_cast<size_t>(k_modes));

  for (int k = 0; k < k_modes; ++k) {
    VarId traj = state.traj[static_cast<size_t>(k)];
    VarId emb = state.emb[static_cast<size_t>(k)];

    // Anchors and radii for this iteration come from the trajectory as it
    // stands at the start of the iteration; segments are then refined in
    // order with the embedding carried forward.
    const VarId traj_at_start = traj;
    const std::vector<Anchor> anchors = select_anchors(t.val(traj), n_anchors_);
    std::vector<VarId> seg_scales;
    for (const Anchor& a : anchors) {
      const double radius = retrieval_radius(iteration, a.speed, cfg_, total_iterations);
      const SegmentResult seg =
          refine_segment(t, store, scene, traj, emb, a, radius, train, traj_at_start);
      traj = seg.traj;
      emb = seg.emb;
      seg_scales.push_back(seg.segment_scales);
    }

    next.traj.push_back(traj);
    next.emb.push_back(emb);
    next.scales.push_back(seg_scales.size() == 1 ? seg_scales[0] : t.concat_rows(seg_scales));
  }

  next.prob = decode_probabilities(t, store, next.emb);
  return next;
}

Scenario scenario_in_target_frame(const Scenario& s) {
  return apply_rigid(s, invert_pose(target_pose(s)));
}

}  // namespace traj
