// KITTI-style dataset directory:
//   calib/%06d.txt  label_2/%06d.txt  velodyne/%06d.bin  image_2/%06d.ppm
// plus an optional mask_2/%06d.pgm pixel foreground mask.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/kitti_io/calib.hpp"
#include "epnet/kitti_io/image_io.hpp"
#include "epnet/kitti_io/label.hpp"
#include "epnet/kitti_io/synth.hpp"
#include "epnet/kitti_io/velodyne.hpp"

namespace epnet {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string read_file_text(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return {b.begin(), b.end()};
}

inline void write_file_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_file_text(const fs::path& p, const std::string& text) {
  write_file_bytes(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string frame_name(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", idx);
  return buf;
}

// Frame ids present under velodyne/, ascending.
inline std::vector<std::size_t> list_frames(const fs::path& root) {
  std::vector<std::size_t> ids;
  const fs::path dir = root / "velodyne";
  if (!fs::is_directory(dir)) throw std::runtime_error("missing directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".bin") continue;
    const std::string stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) continue;
    ids.push_back(static_cast<std::size_t>(std::stoull(stem)));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline void write_scene(const fs::path& root, std::size_t idx, const SceneSample& s) {
  const std::string n = frame_name(idx);
  write_file_text(root / "calib" / (n + ".txt"), write_calib(s.calib));
  write_file_text(root / "label_2" / (n + ".txt"), write_labels(s.labels));
  PointSet velo;
  for (std::size_t i = 0; i < s.points.size(); ++i)
    velo.push_back(s.calib.cam_to_velo(s.points.xyz[i]), s.points.has_intensity() ? s.points.intensity[i] : 0.0);
  write_file_bytes(root / "velodyne" / (n + ".bin"), write_velodyne(velo));
  write_file_bytes(root / "image_2" / (n + ".ppm"), write_ppm(s.image));
  write_file_bytes(root / "mask_2" / (n + ".pgm"), write_mask_pgm(s.pixel_fg, s.image.dim(0), s.image.dim(1)));
}

// Without a mask file, the pixel mask is derived from projected foreground points.
inline SceneSample load_scene(const fs::path& root, std::size_t idx, double fg_margin = 1e-3) {
  const std::string n = frame_name(idx);
  SceneSample s;
  s.calib = read_calib(read_file_text(root / "calib" / (n + ".txt")));
  for (const LabelRecord& r : read_labels(read_file_text(root / "label_2" / (n + ".txt")))) {
    if (!r.is_object()) continue;
    s.labels.push_back(r);
    s.boxes.push_back(r.to_box());
    s.classes.push_back(r.type);
  }
  const PointSet velo = read_velodyne(read_file_bytes(root / "velodyne" / (n + ".bin")));
  for (std::size_t i = 0; i < velo.size(); ++i) s.points.push_back(s.calib.velo_to_cam(velo.xyz[i]), velo.intensity[i]);
  s.image = read_ppm(read_file_bytes(root / "image_2" / (n + ".ppm")));
  s.point_fg = point_foreground_mask(s.points, s.boxes, fg_margin);
  const std::size_t H = s.image.dim(0), W = s.image.dim(1);
  const fs::path mask = root / "mask_2" / (n + ".pgm");
  if (fs::exists(mask)) {
    std::size_t h = 0, w = 0;
    s.pixel_fg = read_mask_pgm(read_file_bytes(mask), h, w);
    if (h != H || w != W) throw std::runtime_error("mask size does not match image for frame " + n);
  } else {
    s.pixel_fg.assign(H * W, 0);
    const PixelCoords pc = project_points(s.calib.p2, s.points, {H, W});
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (!pc.valid[i] || !s.point_fg[i]) continue;
      const auto u = static_cast<std::size_t>(std::lround(pc.uv[i][0]));
      const auto v = static_cast<std::size_t>(std::lround(pc.uv[i][1]));
      s.pixel_fg[v * W + u] = 1;
    }
  }
  s.meta.placed_objects = static_cast<int>(s.boxes.size());
  return s;
}

}  // namespace epnet
