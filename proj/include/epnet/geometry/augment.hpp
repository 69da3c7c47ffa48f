// Training-time scene augmentation and robustness perturbations.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "epnet/core/array.hpp"
#include "epnet/core/rng.hpp"
#include "epnet/geometry/types.hpp"

namespace epnet {

struct AugmentConfig {
  double max_rotation = std::numbers::pi / 18.0;
  double flip_probability = 0.5;
  double scale_lo = 0.95;
  double scale_hi = 1.05;
};

// A concrete draw of augmentation parameters.
struct AugmentParams {
  double rotation = 0.0;
  bool flip = false;
  std::vector<double> box_scales;  // one per box; empty means 1
};

inline AugmentParams draw_augment(std::size_t num_boxes, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(seed);
  AugmentParams p;
  p.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  p.flip = rng.uniform() < cfg.flip_probability;
  for (std::size_t i = 0; i < num_boxes; ++i) p.box_scales.push_back(rng.uniform(cfg.scale_lo, cfg.scale_hi));
  return p;
}

struct AugmentedScene {
  PointSet points;
  std::vector<Box3D> boxes;
};

// Order: per-box scaling about the box center, rotation about the vertical
// (camera Y) axis, then mirroring of the lateral X axis.
inline AugmentedScene apply_augment(const PointSet& pts, const std::vector<Box3D>& boxes, const AugmentParams& p) {
  AugmentedScene out{pts, boxes};
  for (std::size_t b = 0; b < boxes.size() && b < p.box_scales.size(); ++b) {
    const double s = p.box_scales[b];
    const Box3D& box = boxes[b];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!point_in_box(box, pts.xyz[i])) continue;
      for (int k = 0; k < 3; ++k) {
        const double c = k == 0 ? box.x : (k == 1 ? box.y : box.z);
        const auto uk = static_cast<std::size_t>(k);
        out.points.xyz[i][uk] = c + s * (pts.xyz[i][uk] - c);
      }
    }
    out.boxes[b].l *= s;
    out.boxes[b].h *= s;
    out.boxes[b].w *= s;
  }
  if (p.rotation != 0.0) {
    const double c = std::cos(p.rotation), s = std::sin(p.rotation);
    auto rot = [&](double& x, double& z) {
      const double nx = c * x + s * z, nz = -s * x + c * z;
      x = nx;
      z = nz;
    };
    for (auto& q : out.points.xyz) rot(q[0], q[2]);
    for (auto& b : out.boxes) {
      rot(b.x, b.z);
      b.ry = normalize_angle(b.ry + p.rotation);
    }
  }
  if (p.flip) {
    for (auto& q : out.points.xyz) q[0] = -q[0];
    for (auto& b : out.boxes) {
      b.x = -b.x;
      b.ry = normalize_angle(std::numbers::pi - b.ry);
    }
  }
  return out;
}

inline AugmentedScene augment(const PointSet& pts, const std::vector<Box3D>& boxes, std::uint64_t seed,
                              const AugmentConfig& cfg = {}) {
  return apply_augment(pts, boxes, draw_augment(boxes.size(), seed, cfg));
}

struct PerturbationConfig {
  double gain_lo = 0.5;
  double gain_hi = 1.5;
  double offset = 5.0;
  std::size_t noise_points_per_object = 100;
  // Radius of the noise ball around each box center; unset means half the
  // box diagonal.
  std::optional<double> noise_radius;
};

struct PerturbedScene {
  Array image;
  PointSet points;
  double gain = 1.0;
};

// Illumination change y = a*x + b (clamped to [0, 255]) with a single gain per
// image, plus uniform noise points inside a ball around each box center.
inline PerturbedScene perturb(const Array& image, const PointSet& pts, const std::vector<Box3D>& boxes,
                              const PerturbationConfig& cfg, std::uint64_t seed) {
  if (cfg.gain_lo > cfg.gain_hi) throw std::invalid_argument("perturb: gain_lo > gain_hi");
  Rng rng(seed);
  PerturbedScene out{image, pts, rng.uniform(cfg.gain_lo, cfg.gain_hi)};
  if (cfg.gain_lo == cfg.gain_hi) out.gain = cfg.gain_lo;
  for (double& v : out.image.raw()) v = std::clamp(out.gain * v + cfg.offset, 0.0, 255.0);
  for (const Box3D& b : boxes) {
    const double r = cfg.noise_radius ? *cfg.noise_radius : 0.5 * std::sqrt(b.l * b.l + b.h * b.h + b.w * b.w);
    for (std::size_t k = 0; k < cfg.noise_points_per_object; ++k) {
      Vec3 d;
      do {
        d = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      } while (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > 1.0);
      const Vec3 p{b.x + r * d[0], b.y + r * d[1], b.z + r * d[2]};
      if (out.points.has_intensity()) {
        out.points.push_back(p, rng.uniform());
      } else {
        out.points.push_back(p);
      }
    }
  }
  return out;
}

}  // namespace epnet
