#include "traj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace traj {

namespace {

double endpoint_error(const Mat& mode, const Mat& gt) {
  const int last = gt.rows - 1;
  const double dx = mode.at(last, 0) - gt.at(last, 0);
  const double dy = mode.at(last, 1) - gt.at(last, 1);
  return std::sqrt(dx * dx + dy * dy);
}

void check_modes(const std::vector<Mat>& modes, const Mat& gt) {
  if (modes.empty()) throw std::invalid_argument("metrics: no modes");
  for (const Mat& m : modes) {
    if (!m.same_shape(gt)) {
      throw std::invalid_argument("metrics: mode shape " + shape_str(m) +
                                  " does not match ground truth " + shape_str(gt));
    }
  }
}

}  // namespace

int best_mode_by_endpoint(const std::vector<Mat>& modes, const Mat& gt) {
  check_modes(modes, gt);
  int best = 0;
  double best_err = endpoint_error(modes[0], gt);
  for (size_t k = 1; k < modes.size(); ++k) {
    const double err = endpoint_error(modes[k], gt);
    if (err < best_err) {
      best = static_cast<int>(k);
      best_err = err;
    }
  }
  return best;
}

double min_ade(const std::vector<Mat>& modes, const Mat& gt) {
  const Mat& best = modes[static_cast<size_t>(best_mode_by_endpoint(modes, gt))];
  double acc = 0.0;
  for (int r = 0; r < gt.rows; ++r) {
    const double dx = best.at(r, 0) - gt.at(r, 0);
    const double dy = best.at(r, 1) - gt.at(r, 1);
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc / gt.rows;
}

double min_fde(const std::vector<Mat>& modes, const Mat& gt) {
  check_modes(modes, gt);
  double best = endpoint_error(modes[0], gt);
  for (size_t k = 1; k < modes.size(); ++k) {
    best = std::min(best, endpoint_error(modes[k], gt));
  }
  return best;
}

double miss_rate(const std::vector<double>& min_fdes, double threshold) {
  if (min_fdes.empty()) throw std::invalid_argument("miss_rate: empty input");
  if (threshold <= 0.0) throw std::invalid_argument("miss_rate: threshold must be > 0");
  int misses = 0;
  for (double f : min_fdes) {
    if (f > threshold) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(min_fdes.size());
}

// ----------------------------------------------------------------- per-scenario

namespace {

int argmax(const Mat& row) {
  int best = 0;
  for (int k = 1; k < row.cols; ++k) {
    if (row.d[static_cast<size_t>(k)] > row.d[static_cast<size_t>(best)]) best = k;
  }
  return best;
}

std::vector<Mat> traj_values(const Tape& t, const std::vector<VarId>& ids) {
  std::vector<Mat> out;
  out.reserve(ids.size());
  for (VarId id : ids) out.push_back(t.val(id));
  return out;
}

}  // namespace

ScenarioEval eval_scenario_fixed(const Backbone& backbone, const RefineModel& refine,
                                 const ScoreModel& score, const ParameterStore& store,
                                 const Scenario& scenario, int iterations) {
  Tape t(/*grad=*/false);
  const Scenario local = scenario_in_target_frame(scenario);
  const SceneIndex scene(local, refine.config().r_max);
  const Mat gt = future_in_target_frame(scenario);

  ScenarioEval ev;
  ev.id = scenario.id;
  ev.iterations_used = iterations;

  const BackboneVars bb = backbone.forward(t, store, local, /*train=*/false);
  RefineVars state;
  state.traj = bb.traj;
  state.emb = refine.compress(t, store, bb.emb);
  state.prob = bb.prob;
  state.iteration = 0;

  std::vector<std::vector<VarId>> snapshots{state.emb};
  std::vector<double> errors;
  auto record_iteration = [&](const std::vector<VarId>& traj, VarId prob) {
    const std::vector<Mat> modes = traj_values(t, traj);
    ev.min_fde_trace.push_back(min_fde(modes, gt));
    ev.min_ade_trace.push_back(min_ade(modes, gt));
    errors.push_back(ev.min_fde_trace.back());
    VarId scores = score.decode(t, store, snapshots);
    ev.score_trace.push_back(t.val(scores).d[static_cast<size_t>(argmax(t.val(prob)))]);
  };
  record_iteration(state.traj, state.prob);

  for (int i = 1; i <= iterations; ++i) {
    state = refine.refine_iteration(t, store, scene, state, i, iterations, /*train=*/false);
    snapshots.push_back(state.emb);
    record_iteration(state.traj, state.prob);
  }

  ev.label_trace = quality_labels(errors);
  const std::vector<Mat> final_modes = traj_values(t, state.traj);
  for (const Mat& m : final_modes) ev.mode_fde.push_back(endpoint_error(m, gt));
  ev.final_min_ade = ev.min_ade_trace.back();
  ev.final_min_fde = ev.min_fde_trace.back();
  return ev;
}

ScenarioEval eval_scenario_adaptive(const Backbone& backbone, const RefineModel& refine,
                                    const ScoreModel& score, const ParameterStore& store,
                                    const Scenario& scenario, const InferenceConfig& cfg) {
  const AdaptiveResult res = adaptive_infer(backbone, refine, score, store, scenario, cfg);
  const Mat gt = future_in_target_frame(scenario);

  ScenarioEval ev;
  ev.id = scenario.id;
  ev.iterations_used = res.iterations_used;
  ev.score_trace = res.score_trace;
  for (const Mat& m : res.prediction.trajectories) ev.mode_fde.push_back(endpoint_error(m, gt));
  ev.final_min_ade = min_ade(res.prediction.trajectories, gt);
  ev.final_min_fde = min_fde(res.prediction.trajectories, gt);
  return ev;
}

// --------------------------------------------------------------- dataset runs

namespace {

EvalReport aggregate(std::vector<ScenarioEval> records, const std::string& mode, int iterations) {
  EvalReport report;
  report.mode = mode;
  report.iterations = iterations;

  if (mode == "fixed") {
    for (int i = 0; i <= iterations; ++i) {
      IterationMetrics m;
      std::vector<double> fdes;
      double ade_acc = 0.0;
      for (const auto& r : records) {
        fdes.push_back(r.min_fde_trace[static_cast<size_t>(i)]);
        ade_acc += r.min_ade_trace[static_cast<size_t>(i)];
      }
      m.min_fde = std::accumulate(fdes.begin(), fdes.end(), 0.0) / fdes.size();
      m.min_ade = ade_acc / records.size();
      m.miss_rate = miss_rate(fdes);
      report.per_iteration.push_back(m);
    }
    report.final_metrics = report.per_iteration.back();
    report.mean_iterations = iterations;
  } else {
    std::vector<double> fdes;
    double ade_acc = 0.0, iter_acc = 0.0;
    for (const auto& r : records) {
      fdes.push_back(r.final_min_fde);
      ade_acc += r.final_min_ade;
      iter_acc += r.iterations_used;
    }
    report.final_metrics.min_fde = std::accumulate(fdes.begin(), fdes.end(), 0.0) / fdes.size();
    report.final_metrics.min_ade = ade_acc / records.size();
    report.final_metrics.miss_rate = miss_rate(fdes);
    report.mean_iterations = iter_acc / records.size();
  }
  report.records = std::move(records);
  return report;
}

ScenarioEval eval_one(const Backbone& backbone, const RefineModel& refine, const ScoreModel& score,
                      const ParameterStore& store, const Scenario& s, const std::string& mode,
                      int iterations, const InferenceConfig& icfg) {
  if (mode == "fixed") return eval_scenario_fixed(backbone, refine, score, store, s, iterations);
  if (mode == "adaptive") return eval_scenario_adaptive(backbone, refine, score, store, s, icfg);
  throw std::invalid_argument("unknown eval mode '" + mode + "'");
}

}  // namespace

EvalReport eval_dataset_serial(const Backbone& backbone, const RefineModel& refine,
                               const ScoreModel& score, const ParameterStore& store,
                               const std::vector<Scenario>& scenarios, const std::string& mode,
                               int iterations, const InferenceConfig& icfg) {
  if (scenarios.empty()) throw std::invalid_argument("eval: empty dataset");
  std::vector<ScenarioEval> records(scenarios.size());
  for (size_t i = 0; i < scenarios.size(); ++i) {
    records[i] = eval_one(backbone, refine, score, store, scenarios[i], mode, iterations, icfg);
  }
  return aggregate(std::move(records), mode, iterations);
}

EvalReport eval_dataset_parallel(const Backbone& backbone, const RefineModel& refine,
                                 const ScoreModel& score, const ParameterStore& store,
                                 const std::vector<Scenario>& scenarios, const std::string& mode,
                                 int iterations, const InferenceConfig& icfg, int jobs) {
  if (scenarios.empty()) throw std::invalid_argument("eval: empty dataset");
  if (jobs < 1) throw std::invalid_argument("eval: jobs must be >= 1");
  const int n = static_cast<int>(scenarios.size());
  std::vector<ScenarioEval> records(scenarios.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (int i = 0; i < n; ++i) {
    try {
      records[static_cast<size_t>(i)] = eval_one(backbone, refine, score, store,
                                                 scenarios[static_cast<size_t>(i)], mode,
                                                 iterations, icfg);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return aggregate(std::move(records), mode, iterations);
}

// ------------------------------------------------------------------- analysis

ScoreDistribution score_distribution(const std::vector<ScenarioEval>& records) {
  if (records.empty()) throw std::invalid_argument("score_distribution: no records");
  const size_t n_iter = records[0].label_trace.size();
  if (n_iter == 0) {
    throw std::invalid_argument("score_distribution: records carry no quality labels "
                                "(ground truth required)");
  }
  ScoreDistribution out;
  out.histograms.assign(n_iter, {});
  int n_low = 0, n_low_improved = 0, n_high = 0, n_high_worsened = 0;
  int n_high_initial = 0, n_high_final = 0;
  for (const auto& r : records) {
    if (r.label_trace.size() != n_iter) {
      throw std::invalid_argument("score_distribution: inconsistent label trace lengths");
    }
    for (size_t i = 0; i < n_iter; ++i) {
      const int bin = std::min(9, static_cast<int>(r.label_trace[i] * 10.0));
      out.histograms[i][static_cast<size_t>(bin)]++;
    }
    const double q0 = r.label_trace.front();
    const double qf = r.label_trace.back();
    if (q0 < 0.2) {
      ++n_low;
      if (qf > q0) ++n_low_improved;
    }
    if (q0 > 0.8) {
      ++n_high;
      if (qf < q0) ++n_high_worsened;
    }
    if (q0 >= 0.8) ++n_high_initial;
    if (qf >= 0.8) ++n_high_final;
  }
  out.frac_low_improved = n_low > 0 ? static_cast<double>(n_low_improved) / n_low : 0.0;
  out.frac_high_worsened = n_high > 0 ? static_cast<double>(n_high_worsened) / n_high : 0.0;
  out.frac_high_initial = static_cast<double>(n_high_initial) / records.size();
  out.frac_high_final = static_cast<double>(n_high_final) / records.size();
  return out;
}

// ------------------------------------------------------------------- reports

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_eval_report(const EvalReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  nlohmann::json summary;
  summary["mode"] = report.mode;
  summary["iterations"] = report.iterations;
  summary["n_scenarios"] = report.records.size();
  summary["mean_iterations"] = report.mean_iterations;
  summary["final"] = {{"min_ade", report.final_metrics.min_ade},
                      {"min_fde", report.final_metrics.min_fde},
                      {"miss_rate", report.final_metrics.miss_rate}};
  if (!report.per_iteration.empty()) {
    nlohmann::json arr = nlohmann::json::array();
    for (size_t i = 0; i < report.per_iteration.size(); ++i) {
      arr.push_back({{"iteration", i},
                     {"min_ade", report.per_iteration[i].min_ade},
                     {"min_fde", report.per_iteration[i].min_fde},
                     {"miss_rate", report.per_iteration[i].miss_rate}});
    }
    summary["per_iteration"] = arr;
  }
  std::ofstream js(out_dir + "/summary.json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + out_dir + "/summary.json");
  js << summary.dump(2) << "\n";

  // Per-scenario CSV. Trace columns are sized by the longest trace; adaptive
  // runs leave unused cells empty.
  size_t n_trace = 0, n_modes = 0;
  for (const auto& r : report.records) {
    n_trace = std::max(n_trace, std::max(r.score_trace.size(), r.label_trace.size()));
    n_modes = std::max(n_modes, r.mode_fde.size());
  }
  std::ofstream csv(out_dir + "/per_scenario.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + out_dir + "/per_scenario.csv");
  csv << "id,iterations_used,final_min_ade,final_min_fde";
  for (size_t k = 0; k < n_modes; ++k) csv << ",fde_mode" << k;
  for (size_t i = 0; i < n_trace; ++i) csv << ",score_" << i;
  for (size_t i = 0; i < n_trace; ++i) csv << ",label_" << i;
  for (size_t i = 0; i < n_trace; ++i) csv << ",min_fde_" << i;
  csv << "\n";
  for (const auto& r : report.records) {
    csv << r.id << "," << r.iterations_used << "," << fmt(r.final_min_ade) << ","
        << fmt(r.final_min_fde);
    auto emit = [&](const std::vector<double>& v, size_t n) {
      for (size_t i = 0; i < n; ++i) {
        csv << ",";
        if (i < v.size()) csv << fmt(v[i]);
      }
    };
    emit(r.mode_fde, n_modes);
    emit(r.score_trace, n_trace);
    emit(r.label_trace, n_trace);
    emit(r.min_fde_trace, n_trace);
    csv << "\n";
  }
}

std::vector<ScenarioEval> read_per_scenario_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) return {};

  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }

  std::vector<ScenarioEval> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    ScenarioEval ev;
    size_t ci = 0;
    while (std::getline(ss, cell, ',')) {
      if (ci >= cols.size()) break;
      const std::string& name = cols[ci];
      if (!cell.empty()) {
        if (name == "id") {
          ev.id = cell;
        } else if (name == "iterations_used") {
          ev.iterations_used = std::stoi(cell);
        } else if (name == "final_min_ade") {
          ev.final_min_ade = std::stod(cell);
        } else if (name == "final_min_fde") {
          ev.final_min_fde = std::stod(cell);
        } else if (name.rfind("fde_mode", 0) == 0) {
          ev.mode_fde.push_back(std::stod(cell));
        } else if (name.rfind("score_", 0) == 0) {
          ev.score_trace.push_back(std::stod(cell));
        } else if (name.rfind("label_", 0) == 0) {
          ev.label_trace.push_back(std::stod(cell));
        } else if (name.rfind("min_fde_", 0) == 0) {
          ev.min_fde_trace.push_back(std::stod(cell));
        }
      }
      ++ci;
    }
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace traj
