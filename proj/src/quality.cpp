#include "traj/quality.hpp"

#include <algorithm>
#include <cmath>

namespace traj {

std::vector<double> quality_labels(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("quality_labels: no errors given");
  double d_min = errors[0], d_max = errors[0];
  for (double d : errors) {
    if (!std::isfinite(d)) throw std::invalid_argument("quality_labels: non-finite error");
    if (d < 0.0) throw std::invalid_argument("quality_labels: negative error");
    d_min = std::min(d_min, d);
    d_max = std::max(d_max, d);
  }
  std::vector<double> q(errors.size(), 1.0);
  const double range = d_max - d_min;
  if (range < 1e-6) return q;  // no refinement potential left
  for (size_t i = 0; i < errors.size(); ++i) q[i] = (d_max - errors[i]) / range;
  return q;
}

void validate_inference_config(const InferenceConfig& cfg) {
  if (cfg.q_bar < 0.0 || cfg.q_bar > 1.0) {
    throw std::invalid_argument("inference config: q_bar outside [0,1]");
  }
  if (cfg.max_iterations < 0) {
    throw std::invalid_argument("inference config: max_iterations must be >= 0");
  }
}

void ScoreModel::init_params(ParameterStore& store, Rng& rng) const {
  init_gru(store, rng, "score/gru", hidden_, hidden_);
  init_mlp2(store, rng, "score/head", hidden_, hidden_, 1);
}

VarId ScoreModel::decode(Tape& t, const ParameterStore& store,
                         const std::vector<std::vector<VarId>>& snapshots) const {
  if (snapshots.empty()) throw std::invalid_argument("score decode: no embedding snapshots");
  const size_t k_modes = snapshots[0].size();
  std::vector<VarId> scores;
  scores.reserve(k_modes);
  for (size_t k = 0; k < k_modes; ++k) {
    VarId h = t.input(Mat(1, hidden_));
    for (const auto& snap : snapshots) {
      if (t.val(snap[k]).cols != hidden_) {
        throw std::invalid_argument("score decode: embedding width mismatch, expected " +
                                    std::to_string(hidden_) + ", actual " +
                                    std::to_string(t.val(snap[k]).cols));
      }
      h = gru_step(t, store, "score/gru", h, snap[k]);
    }
    scores.push_back(t.sigmoid(mlp2(t, store, "score/head", h)));
  }
  return t.concat_cols(scores);
}

AdaptiveOutcome run_adaptive(double initial_score,
                             const std::function<double(int)>& refine_step,
                             const InferenceConfig& cfg) {
  validate_inference_config(cfg);
  AdaptiveOutcome out;
  out.score_trace.push_back(initial_score);
  if (initial_score > cfg.q_bar) {
    out.iterations_used = 0;
    out.reason = StopReason::kSkippedHighScore;
    return out;
  }
  double prev = initial_score;
  for (int i = 1; i <= cfg.max_iterations; ++i) {
    const double q = refine_step(i);
    out.score_trace.push_back(q);
    out.iterations_used = i;
    if (q < prev) {
      out.reason = StopReason::kScoreDrop;
      return out;
    }
    prev = q;
  }
  out.reason = StopReason::kMaxIterations;
  return out;
}

namespace {

int argmax_prob(const Mat& prob) {
  int best = 0;
  for (int k = 1; k < prob.cols; ++k) {
    if (prob.d[static_cast<size_t>(k)] > prob.d[static_cast<size_t>(best)]) best = k;
  }
  return best;
}

}  // namespace

AdaptiveResult adaptive_infer(const Backbone& backbone, const RefineModel& refine,
                              const ScoreModel& score, const ParameterStore& store,
                              const Scenario& scenario, const InferenceConfig& cfg) {
  Tape t(/*grad=*/false);
  const Scenario local = scenario_in_target_frame(scenario);
  const SceneIndex scene(local, refine.config().r_max);

  const BackboneVars bb = backbone.forward(t, store, local, /*train=*/false);
  RefineVars state;
  state.traj = bb.traj;
  state.emb = refine.compress(t, store, bb.emb);
  state.prob = bb.prob;
  state.iteration = 0;

  std::vector<std::vector<VarId>> snapshots{state.emb};
  VarId scores0 = score.decode(t, store, snapshots);
  const double q0 = t.val(scores0).d[static_cast<size_t>(argmax_prob(t.val(bb.prob)))];

  auto step = [&](int i) {
    state = refine.refine_iteration(t, store, scene, state, i, cfg.max_iterations,
                                    /*train=*/false);
    snapshots.push_back(state.emb);
    VarId scores = score.decode(t, store, snapshots);
    return t.val(scores).d[static_cast<size_t>(argmax_prob(t.val(state.prob)))];
  };
  const AdaptiveOutcome outcome = run_adaptive(q0, step, cfg);

  AdaptiveResult out;
  out.iterations_used = outcome.iterations_used;
  out.reason = outcome.reason;
  out.score_trace = outcome.score_trace;
  if (outcome.iterations_used == 0) {
    out.prediction = Backbone::extract(t, bb);
  } else {
    for (VarId id : state.traj) out.prediction.trajectories.push_back(t.val(id));
    for (VarId id : state.emb) out.prediction.embeddings.push_back(t.val(id));
    const Mat& p = t.val(state.prob);
    out.prediction.probabilities.assign(p.d.begin(), p.d.end());
  }
  return out;
}

}  // namespace traj
