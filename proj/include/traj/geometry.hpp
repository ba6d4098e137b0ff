#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace traj {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 v) { return std::sqrt(v.x * v.x + v.y * v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

// Wrap an angle into (-pi, pi].
double normalize_angle(double a);

// Planar pose: position plus heading, heading in (-pi, pi],
// +x forward, counter-clockwise positive.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

// Validating constructor; throws on non-finite input.
Pose2 make_pose(double x, double y, double heading);

// Express a world point in the frame of `frame` (frame heading maps to +x).
Vec2 to_frame(const Pose2& frame, Vec2 point);

// Inverse of to_frame.
Vec2 from_frame(const Pose2& frame, Vec2 local_point);

// Apply the rigid motion `rigid` to `pose` (compose positions, add headings).
Pose2 transform_pose(const Pose2& rigid, const Pose2& pose);

// Rigid motion g with from_frame(g, x) == to_frame(pose, x) for all x.
Pose2 invert_pose(const Pose2& pose);

// Ordered point sequence with a small-integer semantic tag
// (0 lane, 1 crosswalk, 2 boundary).
struct Polyline {
  std::vector<Vec2> points;
  int semantic = 0;
};

// Throws std::invalid_argument unless the polyline has >= 2 points and
// no coincident consecutive points.
void validate_polyline(const Polyline& p);

}  // namespace traj
