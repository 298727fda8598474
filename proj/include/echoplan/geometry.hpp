#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace echoplan::geom {

inline constexpr double kPi = 3.14159265358979323846;

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

// World point -> coordinates in the frame of `pose` (+x along heading).
inline Vec2 world_to_frame(const Pose2& pose, Vec2 p) {
  double dx = p.x - pose.x, dy = p.y - pose.y;
  double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Vec2 frame_to_world(const Pose2& pose, Vec2 p) {
  double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y};
}

// Oriented rectangle (center, heading, full length along heading, full width).
struct OrientedBox {
  Pose2 pose;
  double length = 0.0;
  double width = 0.0;
};

inline bool point_in_box(const OrientedBox& box, Vec2 p) {
  Vec2 local = world_to_frame(box.pose, p);
  return std::abs(local.x) <= 0.5 * box.length && std::abs(local.y) <= 0.5 * box.width;
}

}  // namespace echoplan::geom
