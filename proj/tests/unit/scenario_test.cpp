#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "traj/scenario.hpp"

using namespace traj;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is deterministic") {
  GeneratorConfig cfg;
  cfg.seed = 42;
  cfg.n_scenarios = 20;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  const std::string pa = temp_path("traj_det_a.jsonl");
  const std::string pb = temp_path("traj_det_b.jsonl");
  write_dataset(a, pa);
  write_dataset(b, pb);
  CHECK(slurp(pa) == slurp(pb));
}

TEST_CASE("noise-free straight scenarios move at constant speed") {
  GeneratorConfig cfg;
  cfg.seed = 7;
  cfg.n_scenarios = 10;
  cfg.noise_std = 0.0;
  cfg.turn_probability = 0.0;
  for (const Scenario& s : generate(cfg)) {
    std::vector<Vec2> pts = s.target.history;
    pts.insert(pts.end(), s.target.future.begin(), s.target.future.end());
    const double step0 = distance(pts[1], pts[0]);
    for (size_t i = 1; i < pts.size(); ++i) {
      CHECK(distance(pts[i], pts[i - 1]) == doctest::Approx(step0).epsilon(1e-9));
    }
    CHECK(step0 / kStepDt >= cfg.speed_min);
    CHECK(step0 / kStepDt <= cfg.speed_max);
  }
}

TEST_CASE("turn probability is honored empirically") {
  GeneratorConfig cfg;
  cfg.seed = 123;
  cfg.n_scenarios = 2000;
  cfg.turn_probability = 0.5;
  int turns = 0;
  for (const Scenario& s : generate(cfg)) {
    if (s.id.find("_left") != std::string::npos || s.id.find("_right") != std::string::npos)
      ++turns;
  }
  const double frac = static_cast<double>(turns) / cfg.n_scenarios;
  CHECK(frac >= 0.45);
  CHECK(frac <= 0.55);
}

TEST_CASE("every generated track satisfies the displacement bound") {
  GeneratorConfig cfg;
  cfg.seed = 99;
  cfg.n_scenarios = 50;
  const double max_step = cfg.speed_max * kStepDt + 1e-9;
  for (const Scenario& s : generate(cfg)) {
    auto check_track = [&](const std::vector<Vec2>& pts) {
      for (size_t i = 1; i < pts.size(); ++i) CHECK(distance(pts[i], pts[i - 1]) <= max_step);
    };
    std::vector<Vec2> target = s.target.history;
    target.insert(target.end(), s.target.future.begin(), s.target.future.end());
    check_track(target);
    for (const auto& o : s.others) check_track(o.history);
  }
}

TEST_CASE("dataset round-trip is lossless") {
  GeneratorConfig cfg;
  cfg.seed = 5;
  cfg.n_scenarios = 100;
  const auto scenarios = generate(cfg);
  const std::string path = temp_path("traj_roundtrip.jsonl");
  write_dataset(scenarios, path);
  const auto loaded = read_dataset(path);
  REQUIRE(loaded.size() == scenarios.size());
  for (size_t i = 0; i < loaded.size(); ++i) CHECK(loaded[i] == scenarios[i]);
}

TEST_CASE("empty file gives an empty dataset") {
  const std::string path = temp_path("traj_empty.jsonl");
  std::ofstream(path, std::ios::trunc).close();
  CHECK(read_dataset(path).empty());
}

TEST_CASE("malformed records are rejected with line numbers and field names") {
  const std::string path = temp_path("traj_bad.jsonl");

  {
    std::ofstream out(path, std::ios::trunc);
    out << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("line 1"), std::runtime_error);

  GeneratorConfig cfg;
  cfg.n_scenarios = 2;
  auto scenarios = generate(cfg);
  scenarios[1].target.future.pop_back();  // future length != t_f
  write_dataset(scenarios, path);
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("future"), std::runtime_error);
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("line 2"), std::runtime_error);

  // Horizon mismatch across records.
  auto a = generate(cfg);
  cfg.t_f = 40;
  auto b = generate(cfg);
  std::vector<Scenario> mixed{a[0], b[0]};
  {
    std::ofstream out(path, std::ios::trunc);
    out.close();
    write_dataset(mixed, path);
  }
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("horizon"), std::runtime_error);
}

TEST_CASE("infeasible generator ranges are configuration errors") {
  GeneratorConfig cfg;
  cfg.speed_min = 5.0;
  cfg.speed_max = 2.0;
  CHECK_THROWS_AS(validate_config(cfg), std::invalid_argument);

  GeneratorConfig cfg2;
  cfg2.noise_std = -0.1;
  CHECK_THROWS_AS(validate_config(cfg2), std::invalid_argument);

  GeneratorConfig cfg3;
  cfg3.lane_count_min = 4;
  cfg3.lane_count_max = 2;
  CHECK_THROWS_AS(validate_config(cfg3), std::invalid_argument);
}

TEST_CASE("target pose derives heading from the last history displacement") {
  GeneratorConfig cfg;
  cfg.seed = 21;
  cfg.n_scenarios = 5;
  cfg.noise_std = 0.0;
  for (const Scenario& s : generate(cfg)) {
    const Pose2 pose = target_pose(s);
    const Vec2 last = s.target.history.back();
    CHECK(pose.x == last.x);
    CHECK(pose.y == last.y);
    const Vec2 d = last - s.target.history[s.target.history.size() - 2];
    CHECK(pose.heading == doctest::Approx(std::atan2(d.y, d.x)).epsilon(1e-12));
  }

  // Stationary agent: heading defaults to 0.
  Scenario still;
  still.t_h = 3;
  still.t_f = 2;
  still.target.history = {{1, 1}, {1, 1}, {1, 1}};
  CHECK(target_pose(still).heading == 0.0);
}
