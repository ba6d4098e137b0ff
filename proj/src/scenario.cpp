#include "traj/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "traj/rng.hpp"

namespace traj {

void validate_config(const GeneratorConfig& cfg) {
  auto bad = [](const std::string& what) {
    throw std::invalid_argument("generator config: " + what);
  };
  if (cfg.n_scenarios < 0) bad("n_scenarios must be >= 0");
  if (cfg.t_h < 2) bad("t_h must be >= 2");
  if (cfg.t_f < 1) bad("t_f must be >= 1");
  if (cfg.lane_count_min < 1 || cfg.lane_count_max < cfg.lane_count_min) bad("empty lane count range");
  if (cfg.lane_length_min < 20.0 || cfg.lane_length_max < cfg.lane_length_min) {
    bad("lane length range must be non-empty and >= 20 m");
  }
  if (cfg.speed_min <= 0.0 || cfg.speed_max < cfg.speed_min) bad("empty speed range");
  if (cfg.turn_probability < 0.0 || cfg.turn_probability > 1.0) bad("turn probability outside [0,1]");
  if (cfg.noise_std < 0.0) bad("noise std must be >= 0");
  if (cfg.agent_count_min < 0 || cfg.agent_count_max < cfg.agent_count_min) bad("empty agent count range");
}

void validate_scenario(const Scenario& s, bool require_future) {
  auto bad = [&](const std::string& what) {
    throw std::invalid_argument("scenario '" + s.id + "': " + what);
  };
  if (s.t_h < 2) bad("t_h must be >= 2");
  if (s.t_f < 1) bad("t_f must be >= 1");
  if (static_cast<int>(s.target.history.size()) != s.t_h) bad("target.history length != t_h");
  if (require_future && s.target.future.empty()) bad("target.future missing");
  if (!s.target.future.empty() && static_cast<int>(s.target.future.size()) != s.t_f) {
    bad("target.future length != t_f");
  }
  for (size_t i = 0; i < s.others.size(); ++i) {
    if (static_cast<int>(s.others[i].history.size()) != s.t_h) {
      bad("others[" + std::to_string(i) + "].history length != t_h");
    }
    if (!s.others[i].future.empty() && static_cast<int>(s.others[i].future.size()) != s.t_f) {
      bad("others[" + std::to_string(i) + "].future length != t_f");
    }
  }
  if (s.map.empty()) bad("map must be non-empty");
  for (size_t i = 0; i < s.map.size(); ++i) {
    try {
      validate_polyline(s.map[i]);
    } catch (const std::exception& e) {
      bad("map[" + std::to_string(i) + "]: " + e.what());
    }
  }
}

// ----------------------------------------------------------------- generator

namespace {

// Piecewise straight/arc path, arc-length parameterized.
struct PathGeom {
  struct Seg {
    Vec2 start;
    double heading;
    double length;
    double curvature;  // 0 for straight, +left / -right for arcs
  };
  std::vector<Seg> segs;

  double total_length() const {
    double l = 0.0;
    for (const auto& s : segs) l += s.length;
    return l;
  }

  void add_straight(Vec2 start, double heading, double length) {
    segs.push_back({start, heading, length, 0.0});
  }

  Vec2 end_point() const {
    const Seg& s = segs.back();
    return point_on(s, s.length);
  }
  double end_heading() const {
    const Seg& s = segs.back();
    return s.heading + s.curvature * s.length;
  }

  void add_arc(double radius, double signed_angle) {
    const Vec2 p = end_point();
    const double h = end_heading();
    const double dir = signed_angle >= 0.0 ? 1.0 : -1.0;
    segs.push_back({p, h, radius * std::fabs(signed_angle), dir / radius});
  }

  void extend_straight(double length) {
    segs.push_back({end_point(), end_heading(), length, 0.0});
  }

  static Vec2 point_on(const Seg& s, double ds) {
    if (s.curvature == 0.0) {
      return {s.start.x + ds * std::cos(s.heading), s.start.y + ds * std::sin(s.heading)};
    }
    const double r = 1.0 / std::fabs(s.curvature);
    const double dir = s.curvature > 0.0 ? 1.0 : -1.0;
    const Vec2 center{s.start.x - dir * r * std::sin(s.heading),
                      s.start.y + dir * r * std::cos(s.heading)};
    const double psi = s.heading - dir * M_PI / 2.0 + dir * ds * std::fabs(s.curvature);
    return {center.x + r * std::cos(psi), center.y + r * std::sin(psi)};
  }

  static double heading_on(const Seg& s, double ds) { return s.heading + s.curvature * ds; }

  std::pair<Vec2, double> eval(double s) const {
    double acc = 0.0;
    for (const auto& seg : segs) {
      if (s <= acc + seg.length || &seg == &segs.back()) {
        const double ds = std::max(s - acc, 0.0);
        if (seg.curvature == 0.0 || ds <= seg.length) {
          return {point_on(seg, ds), heading_on(seg, ds)};
        }
        // past the end of a final arc: continue straight
        const Vec2 p = point_on(seg, seg.length);
        const double h = heading_on(seg, seg.length);
        const double extra = ds - seg.length;
        return {{p.x + extra * std::cos(h), p.y + extra * std::sin(h)}, h};
      }
      acc += seg.length;
    }
    return {segs.front().start, segs.front().heading};
  }
};

Vec2 lateral_offset(const PathGeom& path, double s, double offset) {
  auto [p, h] = path.eval(s);
  return {p.x - offset * std::sin(h), p.y + offset * std::cos(h)};
}

Polyline sample_lane(const PathGeom& path, double offset, double s0, double s1, double spacing,
                     int semantic) {
  Polyline line;
  line.semantic = semantic;
  const int n = std::max(2, static_cast<int>(std::floor((s1 - s0) / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    const double s = s0 + spacing * i;
    line.points.push_back(lateral_offset(path, s, offset));
  }
  return line;
}

// Clamp consecutive displacements to v_max * dt (noise can overshoot).
void clamp_track(std::vector<Vec2>& pts, double v_max) {
  const double max_step = v_max * kStepDt;
  for (size_t i = 1; i < pts.size(); ++i) {
    const Vec2 d = pts[i] - pts[i - 1];
    const double len = norm(d);
    if (len > max_step) {
      pts[i] = pts[i - 1] + (max_step / len) * d;
    }
  }
}

std::vector<Vec2> sample_track(const PathGeom& path, double offset, double s_at_t0, double speed,
                               int first_step, int last_step, double noise_std, double v_max,
                               Rng& rng) {
  std::vector<Vec2> pts;
  pts.reserve(last_step - first_step + 1);
  for (int k = first_step; k <= last_step; ++k) {
    Vec2 p = lateral_offset(path, s_at_t0 + speed * kStepDt * k, offset);
    if (noise_std > 0.0) {
      p.x += noise_std * rng.normal();
      p.y += noise_std * rng.normal();
    }
    pts.push_back(p);
  }
  clamp_track(pts, v_max);
  return pts;
}

}  // namespace

Scenario generate_scenario(const GeneratorConfig& cfg, int index) {
  Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(index) + 1);

  const double theta0 = rng.uniform(-M_PI, M_PI);
  const Vec2 origin{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
  const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
  const bool turn = rng.uniform() < cfg.turn_probability;
  const bool turn_left = rng.uniform() < 0.5;
  const double lane_length = rng.uniform(cfg.lane_length_min, cfg.lane_length_max);
  const double arc_radius = rng.uniform(8.0, 15.0);

  const double horizon_dist = speed * kStepDt * (cfg.t_h + cfg.t_f);
  const double total_len = std::max(lane_length, horizon_dist + 12.0);
  const double s_t0 = speed * kStepDt * cfg.t_h + 5.0;

  // Target reference path.
  PathGeom path;
  double arc_start = 0.0;
  if (turn) {
    arc_start = s_t0 + rng.uniform(0.2, 0.5) * speed * kStepDt * cfg.t_f;
    const double angle = (turn_left ? 1.0 : -1.0) * M_PI / 2.0;
    path.add_straight(origin, theta0, arc_start);
    path.add_arc(arc_radius, angle);
    path.extend_straight(std::max(total_len - arc_start, horizon_dist));
  } else {
    path.add_straight(origin, theta0, total_len);
  }
  const double path_len = path.total_length();

  // A branch path providing an alternative hypothesis (straight-through
  // for turn scenarios, a turn for straight ones).
  PathGeom branch;
  const double branch_radius = rng.uniform(8.0, 15.0);
  const bool branch_left = rng.uniform() < 0.5;
  if (turn) {
    branch.add_straight(origin, theta0, path_len);
  } else {
    const double branch_start = s_t0 + rng.uniform(0.2, 0.5) * speed * kStepDt * cfg.t_f;
    branch.add_straight(origin, theta0, branch_start);
    branch.add_arc(branch_radius, (branch_left ? 1.0 : -1.0) * M_PI / 2.0);
    branch.extend_straight(total_len * 0.5);
  }

  Scenario s;
  s.t_h = cfg.t_h;
  s.t_f = cfg.t_f;
  {
    std::ostringstream id;
    id << "s" << std::setw(6) << std::setfill('0') << index << "_"
       << (turn ? (turn_left ? "left" : "right") : "straight");
    s.id = id.str();
  }

  // Map lanes: target lane, branch, then parallel offsets.
  const int lane_count = static_cast<int>(rng.uniform_int(cfg.lane_count_min, cfg.lane_count_max));
  struct LaneGeom {
    const PathGeom* geom;
    double offset;
  };
  std::vector<LaneGeom> lanes;
  lanes.push_back({&path, 0.0});
  if (lane_count >= 2) lanes.push_back({&branch, 0.0});
  const double offsets[] = {3.5, -3.5, 7.0, -7.0, 10.5, -10.5};
  for (int i = 0; static_cast<int>(lanes.size()) < lane_count; ++i) {
    lanes.push_back({&path, offsets[i % 6]});
  }
  const double lane_spacing = 3.5;
  for (const auto& lane : lanes) {
    s.map.push_back(sample_lane(*lane.geom, lane.offset, 0.0, path_len, lane_spacing, 0));
  }
  if (turn && rng.uniform() < 0.5) {
    // Crosswalk across the road shortly before the turn.
    Polyline cw;
    cw.semantic = 1;
    const double s_cw = std::max(2.0, arc_start - 3.0);
    for (double o = -6.0; o <= 6.0; o += 1.5) {
      cw.points.push_back(lateral_offset(path, s_cw, o));
    }
    s.map.push_back(cw);
  }

  // Target track.
  {
    std::vector<Vec2> pts = sample_track(path, 0.0, s_t0, speed, -(cfg.t_h - 1), cfg.t_f,
                                         cfg.noise_std, cfg.speed_max, rng);
    s.target.semantic = kVehicle;
    s.target.history.assign(pts.begin(), pts.begin() + cfg.t_h);
    s.target.future.assign(pts.begin() + cfg.t_h, pts.end());
  }

  // Surrounding agents on random lanes, history only.
  const int n_agents = static_cast<int>(rng.uniform_int(cfg.agent_count_min, cfg.agent_count_max));
  for (int a = 0; a < n_agents; ++a) {
    const auto& lane = lanes[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(lanes.size()) - 1))];
    const double cls_draw = rng.uniform();
    AgentTrack other;
    double a_speed;
    if (cls_draw < 0.7) {
      other.semantic = kVehicle;
      a_speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    } else if (cls_draw < 0.85) {
      other.semantic = kCyclist;
      a_speed = rng.uniform(1.5, std::min(6.0, cfg.speed_max));
    } else {
      other.semantic = kPedestrian;
      a_speed = rng.uniform(0.8, 1.5);
    }
    const double hist_dist = a_speed * kStepDt * cfg.t_h;
    const double s_a = rng.uniform(hist_dist + 2.0, std::max(hist_dist + 4.0, path_len - 5.0));
    const double lat = other.semantic == kPedestrian ? lane.offset + rng.uniform(1.5, 3.0) : lane.offset;
    other.history = sample_track(*lane.geom, lat, s_a, a_speed, -(cfg.t_h - 1), 0, cfg.noise_std,
                                 cfg.speed_max, rng);
    s.others.push_back(std::move(other));
  }

  validate_scenario(s, true);
  return s;
}

std::vector<Scenario> generate(const GeneratorConfig& cfg) {
  validate_config(cfg);
  std::vector<Scenario> out(static_cast<size_t>(cfg.n_scenarios));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < cfg.n_scenarios; ++i) {
    out[static_cast<size_t>(i)] = generate_scenario(cfg, i);
  }
  return out;
}

// -------------------------------------------------------------------- io

namespace {

nlohmann::json points_to_json(const std::vector<Vec2>& pts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

std::vector<Vec2> points_from_json(const nlohmann::json& arr, const std::string& field) {
  if (!arr.is_array()) throw std::invalid_argument("field '" + field + "' must be an array");
  std::vector<Vec2> pts;
  pts.reserve(arr.size());
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
      throw std::invalid_argument("field '" + field + "' must contain [x,y] pairs");
    }
    pts.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return pts;
}

nlohmann::json track_to_json(const AgentTrack& t, bool with_future) {
  nlohmann::json j;
  j["history"] = points_to_json(t.history);
  if (with_future && !t.future.empty()) j["future"] = points_to_json(t.future);
  j["semantic"] = t.semantic;
  return j;
}

AgentTrack track_from_json(const nlohmann::json& j, const std::string& field) {
  AgentTrack t;
  if (!j.contains("history")) throw std::invalid_argument("field '" + field + ".history' missing");
  t.history = points_from_json(j.at("history"), field + ".history");
  if (j.contains("future")) t.future = points_from_json(j.at("future"), field + ".future");
  if (!j.contains("semantic")) throw std::invalid_argument("field '" + field + ".semantic' missing");
  t.semantic = j.at("semantic").get<int>();
  return t;
}

}  // namespace

void write_dataset(const std::vector<Scenario>& scenarios, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
  for (const auto& s : scenarios) {
    nlohmann::json j;
    j["id"] = s.id;
    j["t_h"] = s.t_h;
    j["t_f"] = s.t_f;
    j["target"] = track_to_json(s.target, true);
    nlohmann::json others = nlohmann::json::array();
    for (const auto& o : s.others) others.push_back(track_to_json(o, true));
    j["others"] = others;
    nlohmann::json map = nlohmann::json::array();
    for (const auto& m : s.map) {
      map.push_back({{"points", points_to_json(m.points)}, {"semantic", m.semantic}});
    }
    j["map"] = map;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("failed writing dataset: " + path);
}

std::vector<Scenario> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<Scenario> out;
  std::string line;
  int line_no = 0;
  int t_h = -1, t_f = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Scenario s;
      s.id = j.at("id").get<std::string>();
      s.t_h = j.at("t_h").get<int>();
      s.t_f = j.at("t_f").get<int>();
      s.target = track_from_json(j.at("target"), "target");
      if (j.contains("others")) {
        int idx = 0;
        for (const auto& o : j.at("others")) {
          s.others.push_back(track_from_json(o, "others[" + std::to_string(idx) + "]"));
          ++idx;
        }
      }
      if (!j.contains("map")) throw std::invalid_argument("field 'map' missing");
      for (const auto& m : j.at("map")) {
        Polyline p;
        p.points = points_from_json(m.at("points"), "map.points");
        p.semantic = m.at("semantic").get<int>();
        s.map.push_back(std::move(p));
      }
      validate_scenario(s, false);
      if (t_h < 0) {
        t_h = s.t_h;
        t_f = s.t_f;
      } else if (s.t_h != t_h || s.t_f != t_f) {
        throw std::invalid_argument("horizon mismatch: expected (" + std::to_string(t_h) + "," +
                                    std::to_string(t_f) + "), got (" + std::to_string(s.t_h) +
                                    "," + std::to_string(s.t_f) + ")");
      }
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Pose2 target_pose(const Scenario& s) {
  const auto& h = s.target.history;
  const Vec2 cur = h.back();
  const Vec2 d = h[h.size() - 1] - h[h.size() - 2];
  const double heading = norm(d) < 1e-6 ? 0.0 : std::atan2(d.y, d.x);
  return make_pose(cur.x, cur.y, heading);
}

Scenario apply_rigid(const Scenario& s, const Pose2& motion) {
  Scenario out = s;
  auto xf = [&](std::vector<Vec2>& pts) {
    for (auto& p : pts) p = from_frame(motion, p);
  };
  xf(out.target.history);
  xf(out.target.future);
  for (auto& o : out.others) {
    xf(o.history);
    xf(o.future);
  }
  for (auto& m : out.map) xf(m.points);
  return out;
}

bool operator==(const AgentTrack& a, const AgentTrack& b) {
  auto eq = [](const std::vector<Vec2>& x, const std::vector<Vec2>& y) {
    if (x.size() != y.size()) return false;
    for (size_t i = 0; i < x.size(); ++i) {
      if (x[i].x != y[i].x || x[i].y != y[i].y) return false;
    }
    return true;
  };
  return a.semantic == b.semantic && eq(a.history, b.history) && eq(a.future, b.future);
}

bool operator==(const Scenario& a, const Scenario& b) {
  if (!(a.id == b.id && a.t_h == b.t_h && a.t_f == b.t_f && a.target == b.target &&
        a.others.size() == b.others.size() && a.map.size() == b.map.size())) {
    return false;
  }
  for (size_t i = 0; i < a.others.size(); ++i) {
    if (!(a.others[i] == b.others[i])) return false;
  }
  for (size_t i = 0; i < a.map.size(); ++i) {
    if (a.map[i].semantic != b.map[i].semantic ||
        a.map[i].points.size() != b.map[i].points.size()) {
      return false;
    }
    for (size_t p = 0; p < a.map[i].points.size(); ++p) {
      if (a.map[i].points[p].x != b.map[i].points[p].x ||
          a.map[i].points[p].y != b.map[i].points[p].y) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace traj
