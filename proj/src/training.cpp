#include "traj/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace traj {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.alpha < 0.0) throw std::invalid_argument("train config: alpha must be >= 0");
  if (cfg.iterations < 1) throw std::invalid_argument("train config: iterations must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (cfg.lr0 <= 0.0) throw std::invalid_argument("train config: lr0 must be > 0");
  if (cfg.weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (cfg.jobs < 1) throw std::invalid_argument("train config: jobs must be >= 1");
}

VarId loss_cls(Tape& t, VarId probabilities, int best_mode) {
  const Mat& p = t.val(probabilities);
  if (best_mode < 0 || best_mode >= p.cols) {
    throw std::invalid_argument("loss_cls: best mode index out of range");
  }
  VarId p_best = t.slice_cols(probabilities, best_mode, best_mode + 1);
  return t.scale(t.log_op(t.clamp_min(p_best, 1e-12)), -1.0);
}

VarId loss_reg(Tape& t, VarId mu, VarId scales, const Mat& ground_truth) {
  return laplace_nll(t, mu, scales, t.input(ground_truth));
}

VarId loss_score(Tape& t, const std::vector<VarId>& score_rows, int best_mode,
                 const std::vector<double>& labels) {
  if (score_rows.size() != labels.size()) {
    throw std::invalid_argument("loss_score: " + std::to_string(score_rows.size()) +
                                " score rows vs " + std::to_string(labels.size()) + " labels");
  }
  std::vector<VarId> preds;
  preds.reserve(score_rows.size());
  for (VarId row : score_rows) preds.push_back(t.slice_cols(row, best_mode, best_mode + 1));
  VarId pred = t.concat_cols(preds);
  Mat lab(1, static_cast<int>(labels.size()));
  lab.d.assign(labels.begin(), labels.end());
  return t.mean_all(t.abs_op(t.sub(pred, t.input(std::move(lab)))));
}

namespace {

double endpoint_err(const Mat& mode, const Mat& gt) {
  const int last = gt.rows - 1;
  const double dx = mode.at(last, 0) - gt.at(last, 0);
  const double dy = mode.at(last, 1) - gt.at(last, 1);
  return std::sqrt(dx * dx + dy * dy);
}

double best_endpoint_err(const Tape& t, const std::vector<VarId>& traj, const Mat& gt) {
  double best = endpoint_err(t.val(traj[0]), gt);
  for (size_t k = 1; k < traj.size(); ++k) best = std::min(best, endpoint_err(t.val(traj[k]), gt));
  return best;
}

}  // namespace

ForwardResult training_forward(Tape& t, const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, const ParameterStore& store,
                               const Scenario& scenario, const TrainConfig& cfg) {
  const Scenario local = scenario_in_target_frame(scenario);
  const SceneIndex scene(local, refine.config().r_max);
  const Mat gt = future_in_target_frame(scenario);

  const BackboneVars bb = backbone.forward(t, store, local, /*train=*/true);
  RefineVars state;
  state.traj = bb.traj;
  state.emb = refine.compress(t, store, bb.emb);
  state.prob = bb.prob;
  state.iteration = 0;

  ForwardResult res;
  std::vector<std::vector<VarId>> snapshots{state.emb};
  std::vector<VarId> score_rows{score.decode(t, store, snapshots)};
  std::vector<RefineVars> states{state};
  res.errors.push_back(best_endpoint_err(t, state.traj, gt));

  for (int i = 1; i <= cfg.iterations; ++i) {
    state = refine.refine_iteration(t, store, scene, state, i, cfg.iterations, /*train=*/true);
    snapshots.push_back(state.emb);
    score_rows.push_back(score.decode(t, store, snapshots));
    states.push_back(state);
    res.errors.push_back(best_endpoint_err(t, state.traj, gt));
    if (cfg.stop_gradient && i < cfg.iterations) {
      for (auto& id : state.traj) id = t.input(t.val(id));
      for (auto& id : state.emb) id = t.input(t.val(id));
    }
  }

  res.labels = quality_labels(res.errors);

  // Winner-take-all mode, picked on the final iteration's endpoints.
  int best = 0;
  double best_err = endpoint_err(t.val(state.traj[0]), gt);
  for (size_t k = 1; k < state.traj.size(); ++k) {
    const double err = endpoint_err(t.val(state.traj[k]), gt);
    if (err < best_err) {
      best = static_cast<int>(k);
      best_err = err;
    }
  }
  res.best_mode = best;

  res.cls = loss_cls(t, state.prob, best);
  if (cfg.reg_all_iterations) {
    std::vector<VarId> terms;
    for (int i = 1; i <= cfg.iterations; ++i) {
      const RefineVars& s = states[static_cast<size_t>(i)];
      terms.push_back(loss_reg(t, s.traj[static_cast<size_t>(best)],
                               s.scales[static_cast<size_t>(best)], gt));
    }
    res.reg = t.scale(t.sum_all(t.concat_cols(terms)), 1.0 / cfg.iterations);
  } else {
    res.reg = loss_reg(t, state.traj[static_cast<size_t>(best)],
                       state.scales[static_cast<size_t>(best)], gt);
  }
  res.score = loss_score(t, score_rows, best, res.labels);
  res.total = t.add(t.add(res.cls, res.reg), t.scale(res.score, cfg.alpha));
  return res;
}

// ------------------------------------------------------------------ training

namespace {

struct ScenarioGrads {
  GradList grads;
  double loss = 0.0, cls = 0.0, reg = 0.0, score = 0.0;
};

ScenarioGrads run_one(const Backbone& backbone, const RefineModel& refine, const ScoreModel& score,
                      const ParameterStore& store, const Scenario& s, const TrainConfig& cfg,
                      uint64_t dropout_seed) {
  try {
    Tape t(/*grad=*/true, dropout_seed);
    const ForwardResult fr = training_forward(t, backbone, refine, score, store, s, cfg);
    const double loss = t.scalar(fr.total);
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
    t.backward(fr.total);
    ScenarioGrads out;
    out.loss = loss;
    out.cls = t.scalar(fr.cls);
    out.reg = t.scalar(fr.reg);
    out.score = t.scalar(fr.score);
    t.accumulate_param_grads(out.grads);
    return out;
  } catch (const std::exception& e) {
    throw std::runtime_error("scenario '" + s.id + "': " + e.what());
  }
}

}  // namespace

std::vector<TrainLogRow> train(const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, ParameterStore& store,
                               const std::vector<Scenario>& dataset, const TrainConfig& cfg,
                               const std::string& out_dir, int start_epoch) {
  validate_train_config(cfg);
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  const int n = static_cast<int>(dataset.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;

  std::ofstream log_csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const bool fresh = start_epoch == 0;
    log_csv.open(out_dir + "/metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!log_csv) throw std::runtime_error("cannot write " + out_dir + "/metrics.csv");
    if (fresh) log_csv << "epoch,step,lr,loss,loss_cls,loss_reg,loss_score\n";
  }

  std::vector<TrainLogRow> rows;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng = Rng::derive(cfg.seed, 0x5151, static_cast<uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
    }

    for (int step = 0; step < steps_per_epoch; ++step) {
      const int begin = step * cfg.batch_size;
      const int end = std::min(begin + cfg.batch_size, n);
      const int count = end - begin;

      std::vector<ScenarioGrads> results(static_cast<size_t>(count));
      std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(cfg.jobs)
      for (int b = 0; b < count; ++b) {
        try {
          const Scenario& s = dataset[static_cast<size_t>(order[static_cast<size_t>(begin + b)])];
          const uint64_t drop_seed =
              Rng::derive(cfg.seed, 0xD0, static_cast<uint64_t>(epoch) * 1000003ULL +
                                              static_cast<uint64_t>(step),
                          static_cast<uint64_t>(b))
                  .next_u64();
          results[static_cast<size_t>(b)] =
              run_one(backbone, refine, score, store, s, cfg, drop_seed);
        } catch (...) {
#pragma omp critical
          if (!error) error = std::current_exception();
        }
      }
      if (error) std::rethrow_exception(error);

      // Fixed-order reduction keeps checkpoints byte-identical across job counts.
      std::map<std::string, Mat> acc;
      TrainLogRow row;
      for (const auto& r : results) {
        row.loss += r.loss / count;
        row.loss_cls += r.cls / count;
        row.loss_reg += r.reg / count;
        row.loss_score += r.score / count;
        for (const auto& [name, g] : r.grads) {
          auto it = acc.find(name);
          if (it == acc.end()) {
            acc.emplace(name, g);
          } else {
            for (int i = 0; i < g.size(); ++i) it->second.d[i] += g.d[i];
          }
        }
      }
      GradList grads;
      grads.reserve(acc.size());
      for (auto& [name, g] : acc) {
        for (double& v : g.d) v /= count;
        grads.emplace_back(name, std::move(g));
      }

      const int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + step;
      row.epoch = epoch;
      row.step = global_step;
      row.lr = cosine_lr(global_step, total_steps, cfg.lr0);
      adamw_step(store, grads, row.lr, cfg.weight_decay,
                 cfg.freeze_backbone ? "backbone/" : "");
      rows.push_back(row);
      if (log_csv.is_open()) {
        log_csv << row.epoch << "," << row.step << "," << std::setprecision(17) << row.lr << ","
                << row.loss << "," << row.loss_cls << "," << row.loss_reg << ","
                << row.loss_score << "\n";
        log_csv.flush();
      }
    }

    if (!out_dir.empty()) {
      std::ostringstream name;
      name << out_dir << "/epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
      save_checkpoint(store, name.str(), epoch);
    }
  }
  return rows;
}

}  // namespace traj
