// Network-ready frames built from scene samples.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "epnet/boxes3d/eval.hpp"
#include "epnet/geometry/augment.hpp"
#include "epnet/geometry/beam.hpp"
#include "epnet/geometry/point_ops.hpp"
#include "epnet/geometry/projection.hpp"
#include "epnet/kitti_io/crop.hpp"
#include "epnet/kitti_io/synth.hpp"
#include "epnet/losses/box_codec.hpp"
#include "epnet/toybench/config.hpp"

namespace epnet {

struct Frame {
  PointSet points;  // camera frame, n_points rows
  Array point_in;   // N x 3 normalized coordinates
  PixelCoords coords;
  Array image;  // H x W x 3 scaled to [-1, 1]
  std::vector<std::uint8_t> point_fg;
  std::vector<std::uint8_t> pixel_fg;
  std::vector<std::optional<RegressionTargets>> targets;  // set for foreground points inside the codec range
  std::vector<int> target_box;                            // box index behind each target, -1 otherwise
  std::vector<Box3D> boxes;
  std::vector<GroundTruth> gts;

  // Set-abstraction geometry.
  std::vector<std::size_t> centers;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<InterpWeights> interp;
  PixelCoords center_coords;

  std::size_t size() const { return points.size(); }
  ImageSize image_size() const { return {image.dim(0), image.dim(1)}; }
};

// Geometry-only fields; image, masks and boxes are supplied by the caller.
inline void attach_geometry(Frame& f, const ProjectionMatrix& P, const ToyModelConfig& m, std::uint64_t seed) {
  const std::size_t n = f.points.size();
  if (n == 0) throw std::invalid_argument("frame has no points");
  f.point_in = Array({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    f.point_in.at(i, 0) = f.points.xyz[i][0] / 20.0;
    f.point_in.at(i, 1) = f.points.xyz[i][1] - 1.0;
    f.point_in.at(i, 2) = f.points.xyz[i][2] / 20.0 - 1.0;
  }
  f.coords = project_points(P, f.points, f.image_size());
  const std::size_t m_centers = std::max<std::size_t>(1, n / m.sa_ratio);
  f.centers = farthest_point_sampling(f.points, m_centers, derive_seed(seed, 1));
  std::vector<Vec3> cxyz;
  for (std::size_t c : f.centers) cxyz.push_back(f.points.xyz[c]);
  f.groups = ball_group(f.points, cxyz, m.sa_radius, m.sa_neighbors);
  for (std::size_t c = 0; c < f.groups.size(); ++c)
    if (f.groups[c].empty()) f.groups[c].push_back(f.centers[c]);
  f.interp = three_nn_weights(f.points.xyz, cxyz);
  f.center_coords = f.coords.subset(f.centers);

  f.targets.assign(n, std::nullopt);
  f.target_box.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!f.point_fg[i]) continue;
    for (std::size_t b = 0; b < f.boxes.size(); ++b) {
      if (!point_in_box(f.boxes[b], f.points.xyz[i], 1e-3)) continue;
      if (in_codec_range(f.points.xyz[i], f.boxes[b], m.codec)) {
        f.targets[i] = encode_reg_targets(f.points.xyz[i], f.boxes[b], m.codec);
        f.target_box[i] = static_cast<int>(b);
      }
      break;
    }
  }
}

struct FrameOptions {
  int keep_every = 1;
  const PerturbationConfig* perturbation = nullptr;  // set to corrupt the frame
};

// Optional beam sparsification (sensor frame), optional perturbation, then
// range crop and fixed-size subsampling.
inline Frame make_frame(const SceneSample& s, const ExperimentConfig& cfg, std::uint64_t seed, const FrameOptions& opt = {}) {
  PointSet pts = s.points;
  if (opt.keep_every > 1) {
    PointSet velo;
    for (std::size_t i = 0; i < pts.size(); ++i) velo.push_back(s.calib.cam_to_velo(pts.xyz[i]), pts.intensity.empty() ? 0.0 : pts.intensity[i]);
    const PointSet kept = beam_subsample(velo, opt.keep_every);
    pts = PointSet{};
    for (std::size_t i = 0; i < kept.size(); ++i) pts.push_back(s.calib.velo_to_cam(kept.xyz[i]), kept.intensity[i]);
  }
  Array image = s.image;
  if (opt.perturbation) {
    PerturbedScene p = perturb(s.image, pts, s.boxes, *opt.perturbation, derive_seed(seed, 3));
    image = std::move(p.image);
    pts = std::move(p.points);
  }
  Frame f;
  f.points = crop_and_subsample(pts, cfg.data.range, cfg.data.n_points, derive_seed(seed, 2), cfg.data.crop_order);
  f.image = image;
  for (double& v : f.image.raw()) v = v / 127.5 - 1.0;
  f.boxes = s.boxes;
  for (std::size_t b = 0; b < s.labels.size(); ++b) f.gts.push_back(s.labels[b].to_ground_truth());
  f.point_fg = point_foreground_mask(f.points, f.boxes);
  f.pixel_fg = s.pixel_fg;
  attach_geometry(f, s.calib.p2, cfg.model, seed);
  return f;
}

struct Dataset {
  std::vector<Frame> train;
  std::vector<Frame> eval;
  std::vector<Frame> eval_perturbed;
};

inline std::uint64_t scene_seed(std::uint64_t data_seed, std::size_t idx) { return derive_seed(data_seed, 1000 + idx); }

// Scenes 0..train_frames-1 train, the next eval_frames evaluate.
inline std::vector<SceneSample> synth_scenes(const DataConfig& d) {
  std::vector<SceneSample> out;
  for (std::size_t i = 0; i < d.train_frames + d.eval_frames; ++i) out.push_back(synth_scene(d.synth, scene_seed(d.seed, i)));
  return out;
}

inline Dataset build_dataset(const std::vector<SceneSample>& scenes, const ExperimentConfig& cfg, bool with_perturbed = false) {
  if (scenes.size() < cfg.data.train_frames + cfg.data.eval_frames) throw std::invalid_argument("build_dataset: not enough scenes");
  Dataset ds;
  FrameOptions opt;
  opt.keep_every = cfg.data.keep_every;
  for (std::size_t i = 0; i < cfg.data.train_frames + cfg.data.eval_frames; ++i) {
    const std::uint64_t seed = scene_seed(cfg.data.seed, i);
    Frame f = make_frame(scenes[i], cfg, seed, opt);
    if (i < cfg.data.train_frames) {
      ds.train.push_back(std::move(f));
    } else {
      ds.eval.push_back(std::move(f));
      if (with_perturbed) {
        FrameOptions popt = opt;
        popt.perturbation = &cfg.data.perturbation;
        ds.eval_perturbed.push_back(make_frame(scenes[i], cfg, seed, popt));
      }
    }
  }
  return ds;
}

}  // namespace epnet
