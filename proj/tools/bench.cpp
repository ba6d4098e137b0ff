// Benchmark: serial reference evaluation vs the OpenMP-parallel kernel, plus
// grid-index vs linear-scan retrieval throughput.

#include <chrono>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "traj/commands.hpp"
#include "traj/metrics.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  int n_scenarios = 64;
  int jobs = 4;
#ifdef _OPENMP
  jobs = std::max(2, omp_get_max_threads());
#endif
  if (argc > 1) n_scenarios = std::atoi(argv[1]);
  if (argc > 2) jobs = std::atoi(argv[2]);

  traj::RunConfig cfg = traj::default_config();
  cfg.generator.n_scenarios = n_scenarios;
  const std::vector<traj::Scenario> data = traj::generate(cfg.generator);
  const traj::ModelBundle models = traj::make_models(cfg);
  const traj::ParameterStore store = traj::init_store(cfg);

  std::cout << "dataset: " << data.size() << " scenarios, fixed I=" << cfg.eval.iterations
            << ", jobs=" << jobs << "\n";

  auto t0 = Clock::now();
  const traj::EvalReport serial =
      traj::eval_dataset_serial(models.backbone, models.refine, models.score, store, data,
                                "fixed", cfg.eval.iterations, cfg.inference);
  const double t_serial = seconds_since(t0);
  std::cout << "serial reference:  " << t_serial << " s (" << t_serial / data.size() * 1e3
            << " ms/scenario)\n";

  t0 = Clock::now();
  const traj::EvalReport parallel =
      traj::eval_dataset_parallel(models.backbone, models.refine, models.score, store, data,
                                  "fixed", cfg.eval.iterations, cfg.inference, jobs);
  const double t_parallel = seconds_since(t0);
  std::cout << "openmp kernel:     " << t_parallel << " s (speedup "
            << t_serial / t_parallel << "x)\n";

  const bool same = serial.final_metrics.min_fde == parallel.final_metrics.min_fde &&
                    serial.final_metrics.min_ade == parallel.final_metrics.min_ade;
  std::cout << "aggregates identical: " << (same ? "yes" : "NO") << "\n";

  // Retrieval micro-benchmark: grid index vs linear scan over all points.
  {
    const traj::Scenario local = traj::scenario_in_target_frame(data[0]);
    const traj::SceneIndex index(local, cfg.refine.r_max);
    const auto& pts = index.points();
    const traj::Vec2 center{10.0, 0.0};
    const double radius = 8.0;
    const int reps = 200000;

    t0 = Clock::now();
    size_t acc = 0;
    for (int r = 0; r < reps; ++r) acc += index.query(center, radius, 128).size();
    const double t_grid = seconds_since(t0);

    t0 = Clock::now();
    size_t acc2 = 0;
    for (int r = 0; r < reps; ++r) {
      size_t count = 0;
      for (const auto& p : pts) {
        if (traj::distance(p.position, center) <= radius) ++count;
      }
      acc2 += count;
    }
    const double t_scan = seconds_since(t0);
    std::cout << "retrieval (" << pts.size() << " points): grid " << t_grid * 1e6 / reps
              << " us/query, scan " << t_scan * 1e6 / reps << " us/query (hits " << acc / reps
              << "/" << acc2 / reps << ")\n";
  }
  return 0;
}
