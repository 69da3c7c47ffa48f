// Beam sparsification of a 64-beam scan by elevation-angle binning.
//
// Points are in the sensor frame: x forward, y left, z up.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "epnet/geometry/types.hpp"

namespace epnet {

struct BeamConfig {
  int source_beams = 64;
  double elevation_lo_deg = -23.6;
  double elevation_hi_deg = 3.2;
};

inline double elevation_deg(const Vec3& p) {
  return std::atan2(p[2], std::hypot(p[0], p[1])) * 180.0 / std::numbers::pi;
}

// Bin of a point's elevation; angles outside the span clamp to the end bins.
inline int beam_index(const Vec3& p, const BeamConfig& cfg = {}) {
  const double t = (elevation_deg(p) - cfg.elevation_lo_deg) / (cfg.elevation_hi_deg - cfg.elevation_lo_deg);
  const int b = static_cast<int>(std::floor(t * cfg.source_beams));
  return std::clamp(b, 0, cfg.source_beams - 1);
}

// Elevation (degrees) at the center of bin b.
inline double beam_center_deg(int b, const BeamConfig& cfg = {}) {
  const double step = (cfg.elevation_hi_deg - cfg.elevation_lo_deg) / cfg.source_beams;
  return cfg.elevation_lo_deg + (b + 0.5) * step;
}

// Keeps points whose beam bin is a multiple of keep_every (4 -> 16 beams, 8 -> 8 beams).
inline PointSet beam_subsample(const PointSet& pts, int keep_every, const BeamConfig& cfg = {}) {
  if (keep_every < 1) throw std::invalid_argument("beam_subsample: keep_every must be >= 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (beam_index(pts.xyz[i], cfg) % keep_every == 0) keep.push_back(i);
  }
  return pts.subset(keep);
}

}  // namespace epnet
