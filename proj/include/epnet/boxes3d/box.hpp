// Yawed 3D boxes in the camera frame (X right, Y down, Z forward).
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace epnet {

using Vec3 = std::array<double, 3>;

// Wraps an angle into [-pi, pi).
inline double normalize_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

// Center is the geometric center of the box. `ry` is the rotation about the
// camera Y axis; with ry = 0 the length runs along +X. The heading direction in
// the (x, z) plane is (cos ry, -sin ry).
struct Box3D {
  double x = 0, y = 0, z = 0;
  double l = 1, h = 1, w = 1;
  double ry = 0;

  bool valid() const { return l > 0 && h > 0 && w > 0; }
};

struct Detection {
  Box3D box;
  double score = 0.0;
  std::string label = "Car";
};

// Expresses (px, pz) in the box's (length, width) axes.
inline std::array<double, 2> to_box_frame(const Box3D& b, double px, double pz) {
  const double dx = px - b.x, dz = pz - b.z;
  const double c = std::cos(b.ry), s = std::sin(b.ry);
  return {c * dx - s * dz, s * dx + c * dz};
}

inline bool point_in_box(const Box3D& b, const Vec3& p, double margin = 0.0) {
  if (std::abs(p[1] - b.y) > 0.5 * b.h + margin) return false;
  const auto [a, lat] = to_box_frame(b, p[0], p[2]);
  return std::abs(a) <= 0.5 * b.l + margin && std::abs(lat) <= 0.5 * b.w + margin;
}

// Footprint corners in (x, z), counter-clockwise in the local frame.
inline std::array<std::array<double, 2>, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.ry), s = std::sin(b.ry);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const double la[4] = {hl, -hl, -hl, hl};
  const double wb[4] = {hw, hw, -hw, -hw};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.x + la[i] * c + wb[i] * s, b.z - la[i] * s + wb[i] * c};
  }
  return out;
}

}  // namespace epnet
