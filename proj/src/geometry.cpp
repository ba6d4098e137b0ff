#include "traj/geometry.hpp"

#include <string>

namespace traj {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) + " is not finite");
  }
}

}  // namespace

double normalize_angle(double a) {
  require_finite(a, "angle");
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

Pose2 make_pose(double x, double y, double heading) {
  require_finite(x, "pose.x");
  require_finite(y, "pose.y");
  return Pose2{x, y, normalize_angle(heading)};
}

Vec2 to_frame(const Pose2& frame, Vec2 point) {
  require_finite(point.x, "point.x");
  require_finite(point.y, "point.y");
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  const double dx = point.x - frame.x;
  const double dy = point.y - frame.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 from_frame(const Pose2& frame, Vec2 local_point) {
  require_finite(local_point.x, "point.x");
  require_finite(local_point.y, "point.y");
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {frame.x + c * local_point.x - s * local_point.y,
          frame.y + s * local_point.x + c * local_point.y};
}

Pose2 transform_pose(const Pose2& rigid, const Pose2& pose) {
  const Vec2 p = from_frame(rigid, {pose.x, pose.y});
  return Pose2{p.x, p.y, normalize_angle(rigid.heading + pose.heading)};
}

Pose2 invert_pose(const Pose2& pose) {
  const Vec2 origin = to_frame(pose, {0.0, 0.0});
  return Pose2{origin.x, origin.y, normalize_angle(-pose.heading)};
}

void validate_polyline(const Polyline& p) {
  if (p.points.size() < 2) {
    throw std::invalid_argument("polyline needs at least 2 points");
  }
  for (size_t i = 0; i < p.points.size(); ++i) {
    require_finite(p.points[i].x, "polyline point x");
    require_finite(p.points[i].y, "polyline point y");
    if (i > 0 && distance(p.points[i - 1], p.points[i]) <= 1e-9) {
      throw std::invalid_argument("polyline has coincident consecutive points");
    }
  }
}

}  // namespace traj
