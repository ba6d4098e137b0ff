#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "support/reference.hpp"
#include "traj/commands.hpp"
#include "traj/metrics.hpp"

using namespace traj;

namespace {

Mat offset_copy(const Mat& gt, double dx, double dy) {
  Mat m = gt;
  for (int r = 0; r < m.rows; ++r) {
    m.at(r, 0) += dx;
    m.at(r, 1) += dy;
  }
  return m;
}

Mat random_traj(int t_f, Rng& rng) {
  Mat m(t_f, 2);
  for (double& v : m.d) v = rng.uniform(-10, 10);
  return m;
}

}  // namespace

TEST_CASE("min_ade and min_fde on simple cases") {
  Rng rng(1);
  const Mat gt = random_traj(12, rng);

  // One mode equals the ground truth exactly.
  std::vector<Mat> modes{offset_copy(gt, 3.0, 0.0), gt, offset_copy(gt, 0.0, -2.0)};
  CHECK(min_ade(modes, gt) == 0.0);
  CHECK(min_fde(modes, gt) == 0.0);

  // Single mode offset by (1,0) at every step.
  std::vector<Mat> one{offset_copy(gt, 1.0, 0.0)};
  CHECK(min_ade(one, gt) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(min_fde(one, gt) == doctest::Approx(1.0).epsilon(1e-12));

  // min over endpoint distances.
  std::vector<Mat> spread{offset_copy(gt, 3.0, 0.0), offset_copy(gt, 0.5, 0.0),
                          offset_copy(gt, 2.0, 0.0)};
  CHECK(min_fde(spread, gt) == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(min_fde({Mat(5, 2)}, Mat(6, 2)), std::invalid_argument);
}

TEST_CASE("metrics match brute force on random prediction sets") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int t_f = static_cast<int>(rng.uniform_int(2, 30));
    const Mat gt = random_traj(t_f, rng);
    std::vector<Mat> modes;
    const int k = static_cast<int>(rng.uniform_int(1, 6));
    for (int i = 0; i < k; ++i) modes.push_back(random_traj(t_f, rng));
    CHECK(std::fabs(min_ade(modes, gt) - reference::brute_min_ade(modes, gt)) < 1e-12);
    CHECK(std::fabs(min_fde(modes, gt) - reference::brute_min_fde(modes, gt)) < 1e-12);
  }
}

TEST_CASE("minADE uses the endpoint-best mode, not the ADE-best one") {
  Mat gt(3, 2);
  gt.d = {0, 0, 1, 0, 2, 0};
  // Mode A: perfect until the end, then 1.0 off -> endpoint error 1.0, ADE 1/3.
  Mat a = gt;
  a.at(2, 0) += 1.0;
  // Mode B: 0.9 off everywhere except a perfect endpoint -> endpoint 0, ADE 0.6.
  Mat b = gt;
  b.at(0, 1) += 0.9;
  b.at(1, 1) += 0.9;
  const std::vector<Mat> modes{a, b};
  CHECK(min_fde(modes, gt) == 0.0);
  CHECK(min_ade(modes, gt) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("miss rate thresholds") {
  CHECK(miss_rate({0.0, 0.0, 0.0}) == 0.0);
  CHECK(miss_rate({2.5}) == 1.0);
  CHECK(miss_rate({2.0}) == 0.0);  // boundary is a non-miss
  CHECK(miss_rate({1.0, 3.0, 2.0, 2.0001}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(miss_rate({}), std::invalid_argument);
  CHECK_THROWS_AS(miss_rate({1.0}, 0.0), std::invalid_argument);

  // Monotone non-increasing in the threshold.
  Rng rng(3);
  std::vector<double> fdes;
  for (int i = 0; i < 100; ++i) fdes.push_back(rng.uniform(0.0, 5.0));
  double prev = 1.0;
  for (double thr = 0.5; thr < 5.5; thr += 0.25) {
    const double mr = miss_rate(fdes, thr);
    CHECK(mr <= prev + 1e-15);
    CHECK(std::fabs(mr - reference::brute_miss_rate(fdes, thr)) < 1e-15);
    prev = mr;
  }
}

TEST_CASE("score distribution: constant traces, bin accounting") {
  std::vector<ScenarioEval> records(40);
  for (size_t i = 0; i < records.size(); ++i) {
    records[i].label_trace = {0.55, 0.55, 0.55};
  }
  const ScoreDistribution dist = score_distribution(records);
  REQUIRE(dist.histograms.size() == 3);
  for (const auto& h : dist.histograms) {
    int total = 0;
    for (int b = 0; b < 10; ++b) total += h[static_cast<size_t>(b)];
    CHECK(total == 40);
    CHECK(h[5] == 40);
  }
  CHECK(dist.frac_low_improved == 0.0);
  CHECK(dist.frac_high_worsened == 0.0);

  // Migration stats on handcrafted traces.
  std::vector<ScenarioEval> mixed(4);
  mixed[0].label_trace = {0.1, 0.9};   // low, improved
  mixed[1].label_trace = {0.15, 0.1};  // low, not improved
  mixed[2].label_trace = {0.9, 0.2};   // high, worsened
  mixed[3].label_trace = {0.85, 0.95}; // high, improved
  const ScoreDistribution m = score_distribution(mixed);
  CHECK(m.frac_low_improved == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.frac_high_worsened == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.frac_high_initial == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.frac_high_final == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<ScenarioEval> unlabeled(2);
  CHECK_THROWS_WITH_AS(score_distribution(unlabeled), doctest::Contains("ground truth"),
                       std::invalid_argument);
}

TEST_CASE("serial and parallel evaluation agree exactly") {
  RunConfig cfg = default_config();
  cfg.seed = 17;
  cfg.generator.n_scenarios = 12;
  const auto data = generate(cfg.generator);
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);

  for (const std::string mode : {"fixed", "adaptive"}) {
    const EvalReport serial = eval_dataset_serial(models.backbone, models.refine, models.score,
                                                  store, data, mode, 3, cfg.inference);
    const EvalReport parallel = eval_dataset_parallel(models.backbone, models.refine,
                                                      models.score, store, data, mode, 3,
                                                      cfg.inference, 3);
    CHECK(serial.final_metrics.min_ade == parallel.final_metrics.min_ade);
    CHECK(serial.final_metrics.min_fde == parallel.final_metrics.min_fde);
    CHECK(serial.final_metrics.miss_rate == parallel.final_metrics.miss_rate);
    CHECK(serial.mean_iterations == parallel.mean_iterations);
    REQUIRE(serial.records.size() == parallel.records.size());
    for (size_t i = 0; i < serial.records.size(); ++i) {
      CHECK(serial.records[i].id == parallel.records[i].id);
      CHECK(serial.records[i].final_min_fde == parallel.records[i].final_min_fde);
      CHECK(serial.records[i].score_trace == parallel.records[i].score_trace);
    }
  }
}

TEST_CASE("fixed-mode per-iteration metrics and report round trip") {
  RunConfig cfg = default_config();
  cfg.seed = 23;
  cfg.generator.n_scenarios = 6;
  const auto data = generate(cfg.generator);
  ParameterStore store = init_store(cfg);
  const ModelBundle models = make_models(cfg);

  const EvalReport report = eval_dataset_serial(models.backbone, models.refine, models.score,
                                                store, data, "fixed", 2, cfg.inference);
  REQUIRE(report.per_iteration.size() == 3);
  for (const auto& rec : report.records) {
    CHECK(rec.min_fde_trace.size() == 3);
    CHECK(rec.label_trace.size() == 3);
    CHECK(rec.score_trace.size() == 3);
    CHECK(rec.mode_fde.size() == 6);
  }

  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "traj_report_test").string();
  fs::remove_all(dir);
  write_eval_report(report, dir);
  const auto loaded = read_per_scenario_csv(dir + "/per_scenario.csv");
  REQUIRE(loaded.size() == report.records.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == report.records[i].id);
    CHECK(loaded[i].final_min_fde ==
          doctest::Approx(report.records[i].final_min_fde).epsilon(1e-15));
    REQUIRE(loaded[i].label_trace.size() == report.records[i].label_trace.size());
    for (size_t j = 0; j < loaded[i].label_trace.size(); ++j) {
      CHECK(loaded[i].label_trace[j] ==
            doctest::Approx(report.records[i].label_trace[j]).epsilon(1e-15));
    }
  }
}
