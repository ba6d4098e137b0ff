#include "traj/backbone.hpp"

#include <cmath>

namespace traj {

namespace {
// Semantic inputs: map tags stay 0..3, agent classes are offset so the
// token encoder can tell them apart.
constexpr double kAgentSemanticOffset = 4.0;
}

void Backbone::init_params(ParameterStore& store, Rng& rng) const {
  const int h = cfg_.hidden;
  init_mlp2(store, rng, "backbone/hist", 2 * cfg_.t_h, h, h);
  init_mlp2(store, rng, "backbone/token", 3, h, h);
  init_attention(store, rng, "backbone/attn", h);
  Mat& modes = store.create("backbone/modes", cfg_.k_modes, h);
  for (double& v : modes.d) v = 0.1 * rng.normal();
  init_mlp2(store, rng, "backbone/mode_fuse", h, h, h);
  for (int k = 0; k < cfg_.k_modes; ++k) {
    init_mlp2(store, rng, "backbone/traj" + std::to_string(k), h, h, 2 * cfg_.t_f);
  }
  init_mlp2(store, rng, "backbone/prob", h, 64, 1);
}

BackboneVars Backbone::forward(Tape& t, const ParameterStore& store, const Scenario& scenario,
                               bool train) const {
  if (scenario.t_h != cfg_.t_h || scenario.t_f != cfg_.t_f) {
    throw std::invalid_argument(
        "scenario horizon (" + std::to_string(scenario.t_h) + "," + std::to_string(scenario.t_f) +
        ") does not match model (" + std::to_string(cfg_.t_h) + "," + std::to_string(cfg_.t_f) + ")");
  }
  const Pose2 pose = target_pose(scenario);

  // Flattened agent-centric history.
  Mat hist(1, 2 * cfg_.t_h);
  for (int i = 0; i < cfg_.t_h; ++i) {
    const Vec2 local = to_frame(pose, scenario.target.history[static_cast<size_t>(i)]);
    hist.d[2 * i] = local.x;
    hist.d[2 * i + 1] = local.y;
  }
  VarId agent = mlp2(t, store, "backbone/hist", t.input(std::move(hist)));

  // Scene tokens: every map point and every surrounding-agent waypoint.
  int n_tokens = 0;
  for (const auto& line : scenario.map) n_tokens += static_cast<int>(line.points.size());
  for (const auto& o : scenario.others) n_tokens += static_cast<int>(o.history.size());
  Mat tokens(n_tokens, 3);
  int row = 0;
  for (const auto& line : scenario.map) {
    for (const auto& p : line.points) {
      const Vec2 local = to_frame(pose, p);
      tokens.at(row, 0) = local.x;
      tokens.at(row, 1) = local.y;
      tokens.at(row, 2) = static_cast<double>(line.semantic);
      ++row;
    }
  }
  for (const auto& o : scenario.others) {
    for (const auto& p : o.history) {
      const Vec2 local = to_frame(pose, p);
      tokens.at(row, 0) = local.x;
      tokens.at(row, 1) = local.y;
      tokens.at(row, 2) = kAgentSemanticOffset + static_cast<double>(o.semantic);
      ++row;
    }
  }
  VarId token_emb = mlp2(t, store, "backbone/token", t.input(std::move(tokens)));
  VarId ctx = cross_attention(t, store, "backbone/attn", agent, token_emb, cfg_.n_heads,
                              cfg_.dropout, train);
  VarId fused = t.add(agent, ctx);

  BackboneVars out;
  VarId mode_tokens = t.param("backbone/modes", &store.get("backbone/modes"));
  std::vector<VarId> logits;
  for (int k = 0; k < cfg_.k_modes; ++k) {
    VarId mode_emb = mlp2(t, store, "backbone/mode_fuse",
                          t.add(fused, t.slice_rows(mode_tokens, k, k + 1)));
    out.emb.push_back(mode_emb);
    VarId flat = mlp2(t, store, "backbone/traj" + std::to_string(k), mode_emb);
    out.traj.push_back(t.reshape(flat, cfg_.t_f, 2));
    logits.push_back(mlp2(t, store, "backbone/prob", mode_emb));
  }
  out.prob = t.softmax_rows(t.concat_cols(logits));
  return out;
}

PredictionSet Backbone::extract(const Tape& t, const BackboneVars& v) {
  PredictionSet out;
  for (VarId id : v.traj) out.trajectories.push_back(t.val(id));
  for (VarId id : v.emb) out.embeddings.push_back(t.val(id));
  const Mat& p = t.val(v.prob);
  out.probabilities.assign(p.d.begin(), p.d.end());
  return out;
}

Mat future_in_target_frame(const Scenario& s) {
  if (s.target.future.empty()) throw std::invalid_argument("scenario has no ground-truth future");
  const Pose2 pose = target_pose(s);
  Mat gt(static_cast<int>(s.target.future.size()), 2);
  for (size_t i = 0; i < s.target.future.size(); ++i) {
    const Vec2 local = to_frame(pose, s.target.future[i]);
    gt.at(static_cast<int>(i), 0) = local.x;
    gt.at(static_cast<int>(i), 1) = local.y;
  }
  return gt;
}

}  // namespace traj
