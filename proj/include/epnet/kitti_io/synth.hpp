// Synthetic paired scenes: yawed boxes on a textured ground plane, a ray-cast
// 64-beam scan and a flat-shaded pinhole rendering.
//
// Labelled objects have vivid albedo. Distractor boxes share the object size
// distribution but are gray, and painted ground patches share the object
// colors but have no height, so neither modality alone separates objects from
// clutter.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/iou.hpp"
#include "epnet/core/array.hpp"
#include "epnet/core/rng.hpp"
#include "epnet/geometry/beam.hpp"
#include "epnet/geometry/projection.hpp"
#include "epnet/kitti_io/calib.hpp"
#include "epnet/kitti_io/label.hpp"

namespace epnet {

struct SynthConfig {
  std::size_t image_height = 48;
  std::size_t image_width = 160;
  double focal = 80.0;
  double camera_height = 1.65;

  int min_objects = 1, max_objects = 4;
  int min_distractors = 0, max_distractors = 2;
  int min_patches = 0, max_patches = 2;
  std::string object_class = "Car";

  double l_lo = 3.4, l_hi = 4.4;
  double w_lo = 1.5, w_hi = 1.8;
  double h_lo = 1.4, h_hi = 1.7;
  double z_lo = 8.0, z_hi = 35.0;
  double heading_spread = 0.3;  // road-aligned +-pi/2 plus uniform(+-spread); negative: uniform in [-pi, pi)
  double fov_fraction = 0.8;  // box centers stay inside this share of the half field of view
  double min_gap = 1.0;       // BEV clearance between placed footprints (m)
  int max_retries = 100;

  BeamConfig beams;
  double azimuth_step_deg = 4.0;  // about 100 returns on a car at 10 m
  double max_range = 80.0;
  double pixel_noise = 3.0;
  double fg_margin = 1e-3;

  double cx() const { return 0.5 * static_cast<double>(image_width - 1); }
  double cy() const { return 0.5 * static_cast<double>(image_height - 1); }
  ImageSize image_size() const { return {image_height, image_width}; }

  // Sensor axes (x forward, y left, z up) permuted onto the camera axes, R0 = I.
  CalibRecord calib() const {
    CalibRecord c;
    c.p2 = ProjectionMatrix::from_intrinsics(focal, focal, cx(), cy());
    c.tr = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0};
    return c;
  }
};

struct SceneMeta {
  int requested_objects = 0, placed_objects = 0;
  int requested_distractors = 0, placed_distractors = 0;
  int requested_patches = 0, placed_patches = 0;
};

struct SceneSample {
  PointSet points;  // camera frame
  Array image;      // H x W x 3, integer values in [0, 255]
  std::vector<LabelRecord> labels;
  std::vector<Box3D> boxes;
  std::vector<std::string> classes;
  std::vector<std::uint8_t> point_fg;
  std::vector<std::uint8_t> pixel_fg;  // row-major H x W
  CalibRecord calib;
  SceneMeta meta;

  ImageSize image_size() const { return {image.dim(0), image.dim(1)}; }
};

inline std::vector<std::uint8_t> point_foreground_mask(const PointSet& pts, const std::vector<Box3D>& boxes,
                                                       double margin = 1e-3) {
  std::vector<std::uint8_t> m(pts.size(), 0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (const Box3D& b : boxes)
      if (point_in_box(b, pts.xyz[i], margin)) {
        m[i] = 1;
        break;
      }
  return m;
}

namespace detail {

using Rgb = std::array<double, 3>;

inline Rgb hsv(double h, double s, double v) {
  const double k = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(k)) % 6;
  const double f = k - std::floor(k);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  Rgb c;
  switch (i) {
    case 0: c = {v, t, p}; break;
    case 1: c = {q, v, p}; break;
    case 2: c = {p, v, t}; break;
    case 3: c = {p, q, v}; break;
    case 4: c = {t, p, v}; break;
    default: c = {v, p, q}; break;
  }
  for (double& x : c) x *= 255.0;
  return c;
}

struct RayHit {
  double t = 0.0;
  Vec3 normal{};
};

// Slab test in the box frame. Rays starting inside the box report no hit.
inline std::optional<RayHit> ray_box(const Vec3& o, const Vec3& d, const Box3D& b) {
  const double c = std::cos(b.ry), s = std::sin(b.ry);
  const std::array<Vec3, 3> axes{Vec3{c, 0, -s}, Vec3{0, 1, 0}, Vec3{s, 0, c}};
  const std::array<double, 3> half{0.5 * b.l, 0.5 * b.h, 0.5 * b.w};
  const Vec3 rel{o[0] - b.x, o[1] - b.y, o[2] - b.z};
  double t_in = -1e300, t_out = 1e300;
  std::size_t axis_in = 0;
  double sign_in = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double ok = rel[0] * axes[k][0] + rel[1] * axes[k][1] + rel[2] * axes[k][2];
    const double dk = d[0] * axes[k][0] + d[1] * axes[k][1] + d[2] * axes[k][2];
    if (std::abs(dk) < 1e-15) {
      if (std::abs(ok) > half[k]) return std::nullopt;
      continue;
    }
    double t1 = (-half[k] - ok) / dk, t2 = (half[k] - ok) / dk;
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_in) {
      t_in = t1;
      axis_in = k;
      sign_in = dk > 0 ? -1.0 : 1.0;
    }
    t_out = std::min(t_out, t2);
  }
  if (t_in > t_out || t_in <= 0.0) return std::nullopt;
  RayHit h;
  h.t = t_in;
  for (std::size_t j = 0; j < 3; ++j) h.normal[j] = sign_in * axes[axis_in][j];
  return h;
}

enum class HitKind { None, Ground, Object, Distractor };

struct SceneHit {
  HitKind kind = HitKind::None;
  std::size_t index = 0;
  double t = 0.0;
  Vec3 normal{};
};

struct Patch {
  Box3D footprint;
  Rgb color;
};

struct SceneLayout {
  std::vector<Box3D> objects;
  std::vector<Rgb> object_colors;
  std::vector<Box3D> distractors;
  std::vector<Rgb> distractor_colors;
  std::vector<Patch> patches;
  std::uint64_t texture_seed = 0;
};

inline SceneHit cast(const SceneLayout& s, const Vec3& d, double camera_height) {
  SceneHit best;
  best.t = 1e300;
  const Vec3 o{0, 0, 0};
  auto consider = [&](const std::vector<Box3D>& boxes, HitKind kind) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto h = ray_box(o, d, boxes[i]);
      if (h && h->t < best.t) best = {kind, i, h->t, h->normal};
    }
  };
  consider(s.objects, HitKind::Object);
  consider(s.distractors, HitKind::Distractor);
  if (d[1] > 1e-12) {
    const double t = camera_height / d[1];
    if (t < best.t) best = {HitKind::Ground, 0, t, Vec3{0, -1, 0}};
  }
  if (best.kind == HitKind::None) best.t = 0.0;
  return best;
}

inline Rgb ground_color(const SceneLayout& s, double x, double z) {
  for (const Patch& p : s.patches)
    if (std::abs(to_box_frame(p.footprint, x, z)[0]) <= 0.5 * p.footprint.l &&
        std::abs(to_box_frame(p.footprint, x, z)[1]) <= 0.5 * p.footprint.w)
      return p.color;
  const auto tx = static_cast<std::int64_t>(std::floor(x / 2.0));
  const auto tz = static_cast<std::int64_t>(std::floor(z / 2.0));
  const std::uint64_t key = static_cast<std::uint64_t>(tx * 73856093) ^ static_cast<std::uint64_t>(tz * 19349663);
  const double u = static_cast<double>(derive_seed(s.texture_seed, key) >> 11) * 0x1.0p-53;
  const double v = 95.0 + 45.0 * u;
  return {1.05 * v, v, 0.85 * v};
}

inline bool footprint_clear(const Box3D& cand, const std::vector<Box3D>& placed, double gap) {
  Box3D grown = cand;
  grown.l += 2.0 * gap;
  grown.w += 2.0 * gap;
  for (const Box3D& b : placed)
    if (bev_intersection_area(as_boxt(grown), as_boxt(b)) > 0.0) return false;
  return true;
}

}  // namespace detail

inline SceneSample synth_scene(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.image_height < 2 || cfg.image_width < 2) throw std::invalid_argument("synth_scene: image too small");
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects || cfg.max_distractors < cfg.min_distractors ||
      cfg.max_patches < cfg.min_patches || cfg.min_distractors < 0 || cfg.min_patches < 0) {
    throw std::invalid_argument("synth_scene: invalid count range");
  }
  Rng rng(seed);
  SceneSample out;
  out.calib = cfg.calib();
  detail::SceneLayout layout;
  layout.texture_seed = derive_seed(seed, 7);

  auto count = [&](int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1))); };
  out.meta.requested_objects = count(cfg.min_objects, cfg.max_objects);
  out.meta.requested_distractors = count(cfg.min_distractors, cfg.max_distractors);
  out.meta.requested_patches = count(cfg.min_patches, cfg.max_patches);

  const double half_fov = cfg.fov_fraction * cfg.cx() / cfg.focal;
  std::vector<Box3D> occupied;
  auto place = [&](bool flat) -> std::optional<Box3D> {
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
      Box3D b;
      b.l = rng.uniform(cfg.l_lo, cfg.l_hi);
      b.w = rng.uniform(cfg.w_lo, cfg.w_hi);
      b.h = flat ? 0.01 : rng.uniform(cfg.h_lo, cfg.h_hi);
      b.z = rng.uniform(cfg.z_lo, cfg.z_hi);
      b.x = rng.uniform(-half_fov, half_fov) * b.z;
      b.y = cfg.camera_height - 0.5 * b.h;
      if (cfg.heading_spread < 0.0) {
        b.ry = rng.uniform(-std::numbers::pi, std::numbers::pi);
      } else {
        const double base = rng.coin() ? 0.5 * std::numbers::pi : -0.5 * std::numbers::pi;
        b.ry = base + rng.uniform(-cfg.heading_spread, cfg.heading_spread);
      }
      if (detail::footprint_clear(b, occupied, cfg.min_gap)) {
        occupied.push_back(b);
        return b;
      }
    }
    return std::nullopt;
  };
  auto vivid = [&] { return detail::hsv(rng.uniform(), rng.uniform(0.75, 1.0), rng.uniform(0.7, 0.95)); };

  for (int k = 0; k < out.meta.requested_objects; ++k) {
    const auto b = place(false);
    if (!b) continue;
    LabelRecord r = LabelRecord::from_box(*b, cfg.object_class);
    out.labels.push_back(r);
    layout.objects.push_back(r.to_box());
    layout.object_colors.push_back(vivid());
  }
  for (int k = 0; k < out.meta.requested_distractors; ++k) {
    const auto b = place(false);
    if (!b) continue;
    layout.distractors.push_back(*b);
    layout.distractor_colors.push_back(detail::hsv(rng.uniform(), rng.uniform(0.0, 0.08), rng.uniform(0.35, 0.75)));
  }
  for (int k = 0; k < out.meta.requested_patches; ++k) {
    const auto b = place(true);
    if (!b) continue;
    layout.patches.push_back({*b, vivid()});
  }
  out.meta.placed_objects = static_cast<int>(layout.objects.size());
  out.meta.placed_distractors = static_cast<int>(layout.distractors.size());
  out.meta.placed_patches = static_cast<int>(layout.patches.size());

  const ImageSize isz = cfg.image_size();
  const ProjectionMatrix P = out.calib.p2;

  // Label bookkeeping: 2D box from projected corners, truncation from clipping.
  for (LabelRecord& r : out.labels) {
    const Box3D b = r.to_box();
    double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
    const double c = std::cos(b.ry), s = std::sin(b.ry);
    for (int corner = 0; corner < 8; ++corner) {
      const double a = (corner & 1 ? 0.5 : -0.5) * b.l, lat = (corner & 2 ? 0.5 : -0.5) * b.w;
      const double dy = (corner & 4 ? 0.5 : -0.5) * b.h;
      const Vec3 p{b.x + c * a + s * lat, b.y + dy, b.z - s * a + c * lat};
      const auto hp = P.apply(p);
      u0 = std::min(u0, hp[0] / hp[2]);
      u1 = std::max(u1, hp[0] / hp[2]);
      v0 = std::min(v0, hp[1] / hp[2]);
      v1 = std::max(v1, hp[1] / hp[2]);
    }
    const double W = static_cast<double>(isz.width - 1), H = static_cast<double>(isz.height - 1);
    const double full = (u1 - u0) * (v1 - v0);
    r.bbox = {std::clamp(u0, 0.0, W), std::clamp(v0, 0.0, H), std::clamp(u1, 0.0, W), std::clamp(v1, 0.0, H)};
    const double kept = (r.bbox[2] - r.bbox[0]) * (r.bbox[3] - r.bbox[1]);
    r.truncation = full > 0 ? std::clamp(1.0 - kept / full, 0.0, 1.0) : 0.0;
    r.alpha = normalize_angle(b.ry - std::atan2(b.x, b.z));
  }
  for (const LabelRecord& r : out.labels) {
    out.boxes.push_back(r.to_box());
    out.classes.push_back(r.type);
  }

  // LiDAR: beams at bin-center elevations, azimuths across the camera view.
  const double deg = std::numbers::pi / 180.0;
  const double az_max = std::atan(cfg.cx() / cfg.focal) / deg + cfg.azimuth_step_deg;
  const int n_az = static_cast<int>(std::floor(2.0 * az_max / cfg.azimuth_step_deg)) + 1;
  for (int beam = 0; beam < cfg.beams.source_beams; ++beam) {
    const double e = beam_center_deg(beam, cfg.beams) * deg;
    for (int k = 0; k < n_az; ++k) {
      const double a = (-az_max + k * cfg.azimuth_step_deg) * deg;
      const Vec3 d{-std::cos(e) * std::sin(a), -std::sin(e), std::cos(e) * std::cos(a)};
      const detail::SceneHit hit = detail::cast(layout, d, cfg.camera_height);
      if (hit.kind == detail::HitKind::None || hit.t > cfg.max_range) continue;
      const Vec3 p{hit.t * d[0], hit.t * d[1], hit.t * d[2]};
      const Vec3 v = out.calib.cam_to_velo(p);
      const Vec3 vf{static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
      const Vec3 pc = out.calib.velo_to_cam(vf);
      const auto hp = P.apply(pc);
      if (!(hp[2] > kMinDepth)) continue;
      const double u = hp[0] / hp[2], vv = hp[1] / hp[2];
      if (u < 0.0 || u > static_cast<double>(isz.width - 1) || vv < 0.0 || vv > static_cast<double>(isz.height - 1)) continue;
      const double inc = std::abs(hit.normal[0] * d[0] + hit.normal[1] * d[1] + hit.normal[2] * d[2]);
      out.points.push_back(pc, static_cast<float>(inc));
    }
  }
  out.point_fg = point_foreground_mask(out.points, out.boxes, cfg.fg_margin);

  // Image.
  const Vec3 light = [] {
    const double n = std::sqrt(0.3 * 0.3 + 1.0 + 0.5 * 0.5);
    return Vec3{0.3 / n, -1.0 / n, -0.5 / n};
  }();
  Rng noise(derive_seed(seed, 11));
  out.image = Array({isz.height, isz.width, 3});
  out.pixel_fg.assign(isz.height * isz.width, 0);
  for (std::size_t r = 0; r < isz.height; ++r) {
    for (std::size_t c = 0; c < isz.width; ++c) {
      const Vec3 d{(static_cast<double>(c) - cfg.cx()) / cfg.focal, (static_cast<double>(r) - cfg.cy()) / cfg.focal, 1.0};
      const detail::SceneHit hit = detail::cast(layout, d, cfg.camera_height);
      detail::Rgb col;
      if (hit.kind == detail::HitKind::None) {
        const double g = static_cast<double>(r) / static_cast<double>(isz.height);
        col = {150.0 + 40.0 * g, 185.0 + 30.0 * g, 235.0};
      } else if (hit.kind == detail::HitKind::Ground) {
        col = detail::ground_color(layout, hit.t * d[0], hit.t * d[2]);
      } else {
        const detail::Rgb& alb = hit.kind == detail::HitKind::Object ? layout.object_colors[hit.index]
                                                                      : layout.distractor_colors[hit.index];
        const double lam = std::max(0.0, hit.normal[0] * light[0] + hit.normal[1] * light[1] + hit.normal[2] * light[2]);
        const double shade = 0.45 + 0.55 * lam;
        col = {alb[0] * shade, alb[1] * shade, alb[2] * shade};
        if (hit.kind == detail::HitKind::Object) out.pixel_fg[r * isz.width + c] = 1;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = col[ch] + cfg.pixel_noise * noise.normal();
        out.image.at(r, c, ch) = static_cast<double>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

}  // namespace epnet
