#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "epnet/boxes3d/box.hpp"

namespace epnet {

// N points in the camera frame (meters), optional per-point intensity.
struct PointSet {
  std::vector<Vec3> xyz;
  std::vector<double> intensity;  // empty or one per point

  std::size_t size() const { return xyz.size(); }
  bool has_intensity() const { return !intensity.empty(); }

  void push_back(const Vec3& p) {
    xyz.push_back(p);
    if (has_intensity()) intensity.push_back(0.0);
  }

  void push_back(const Vec3& p, double inten) {
    if (!has_intensity()) intensity.assign(xyz.size(), 0.0);
    xyz.push_back(p);
    intensity.push_back(inten);
  }

  PointSet subset(const std::vector<std::size_t>& idx) const {
    PointSet out;
    out.xyz.reserve(idx.size());
    for (std::size_t i : idx) out.xyz.push_back(xyz[i]);
    if (has_intensity()) {
      out.intensity.reserve(idx.size());
      for (std::size_t i : idx) out.intensity.push_back(intensity[i]);
    }
    return out;
  }
};

// 3x4 matrix mapping homogeneous camera points to homogeneous pixels.
struct ProjectionMatrix {
  std::array<double, 12> m{};

  static ProjectionMatrix from_intrinsics(double fx, double fy, double cx, double cy) {
    return {{fx, 0, cx, 0, 0, fy, cy, 0, 0, 0, 1, 0}};
  }

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }

  // Homogeneous image of p: (u*w, v*w, w).
  std::array<double, 3> apply(const Vec3& p) const {
    std::array<double, 3> out{};
    for (int r = 0; r < 3; ++r) {
      out[static_cast<std::size_t>(r)] = (*this)(r, 0) * p[0] + (*this)(r, 1) * p[1] + (*this)(r, 2) * p[2] + (*this)(r, 3);
    }
    return out;
  }
};

struct PixelCoords {
  std::vector<std::array<double, 2>> uv;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return uv.size(); }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }
  PixelCoords subset(const std::vector<std::size_t>& idx) const {
    PixelCoords out;
    for (std::size_t i : idx) {
      out.uv.push_back(uv[i]);
      out.valid.push_back(valid[i]);
    }
    return out;
  }
};

}  // namespace epnet
