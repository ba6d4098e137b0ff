#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "traj/geometry.hpp"

namespace traj {

constexpr double kStepDt = 0.1;  // 10 Hz sampling

// Agent class tags.
enum AgentClass : int { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

struct AgentTrack {
  std::vector<Vec2> history;  // exactly T_h waypoints, last = current position
  std::vector<Vec2> future;   // exactly T_f waypoints when present (ground truth)
  int semantic = kVehicle;
};

struct Scenario {
  std::string id;
  int t_h = 0;
  int t_f = 0;
  AgentTrack target;
  std::vector<AgentTrack> others;
  std::vector<Polyline> map;
};

struct GeneratorConfig {
  uint64_t seed = 1;
  int n_scenarios = 100;
  int t_h = 20;
  int t_f = 30;
  int lane_count_min = 3;
  int lane_count_max = 5;
  double lane_length_min = 50.0;
  double lane_length_max = 110.0;
  double speed_min = 3.0;
  double speed_max = 12.0;
  double turn_probability = 0.35;
  double noise_std = 0.05;
  int agent_count_min = 1;
  int agent_count_max = 4;
};

// Throws std::invalid_argument on empty ranges / negative noise / bad horizons.
void validate_config(const GeneratorConfig& cfg);

// Throws std::invalid_argument naming the violated field.
void validate_scenario(const Scenario& s, bool require_future);

// Deterministic function of the config: scenario i derives its own stream
// from (seed, i), so generation order (or parallel fan-out) cannot change
// the result.
std::vector<Scenario> generate(const GeneratorConfig& cfg);
Scenario generate_scenario(const GeneratorConfig& cfg, int index);

// JSON-lines dataset, one scenario per line.
void write_dataset(const std::vector<Scenario>& scenarios, const std::string& path);
std::vector<Scenario> read_dataset(const std::string& path);

// The target agent's pose at t=0: position = last history point, heading
// from the last history displacement (0 when nearly stationary).
Pose2 target_pose(const Scenario& s);

// Apply a rigid motion to every point in the scenario (for equivariance
// checks and data augmentation style tests).
Scenario apply_rigid(const Scenario& s, const Pose2& motion);

bool operator==(const AgentTrack& a, const AgentTrack& b);
bool operator==(const Scenario& a, const Scenario& b);

}  // namespace traj
