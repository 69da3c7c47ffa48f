// Point-to-pixel correspondence.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "epnet/geometry/types.hpp"

namespace epnet {

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
};

inline constexpr double kMinDepth = 1e-6;

inline PixelCoords project_points(const ProjectionMatrix& M, const PointSet& pts, ImageSize size) {
  if (size.height == 0 || size.width == 0) throw std::invalid_argument("project_points: empty image size");
  PixelCoords out;
  out.uv.resize(pts.size(), {0.0, 0.0});
  out.valid.resize(pts.size(), 0);
  const double umax = static_cast<double>(size.width - 1), vmax = static_cast<double>(size.height - 1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto h = M.apply(pts.xyz[i]);
    if (!(h[2] > kMinDepth)) continue;
    const double u = h[0] / h[2], v = h[1] / h[2];
    if (!std::isfinite(u) || !std::isfinite(v)) continue;
    out.uv[i] = {u, v};
    out.valid[i] = (u >= 0.0 && u <= umax && v >= 0.0 && v <= vmax) ? 1 : 0;
  }
  return out;
}

// Maps full-resolution coordinates onto a map downsampled by `stride`
// (output pixel j of a strided conv is centered on input pixel stride*j).
// Valid points are clamped onto the smaller grid.
inline PixelCoords scale_coords(const PixelCoords& c, double stride, ImageSize target) {
  PixelCoords out = c;
  const double umax = static_cast<double>(target.width - 1), vmax = static_cast<double>(target.height - 1);
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.uv[i] = {c.uv[i][0] / stride, c.uv[i][1] / stride};
    if (out.valid[i]) out.uv[i] = {std::clamp(out.uv[i][0], 0.0, umax), std::clamp(out.uv[i][1], 0.0, vmax)};
  }
  return out;
}

}  // namespace epnet
