#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "epnet/core/rng.hpp"
#include "epnet/geometry/projection.hpp"
#include "epnet/kitti_io/calib.hpp"
#include "epnet/kitti_io/crop.hpp"
#include "epnet/kitti_io/dataset.hpp"
#include "epnet/kitti_io/image_io.hpp"
#include "epnet/kitti_io/label.hpp"
#include "epnet/kitti_io/synth.hpp"
#include "epnet/kitti_io/velodyne.hpp"

using namespace epnet;
namespace fs = std::filesystem;

namespace {

const std::string kIdentityCalib =
    "P2: 700 0 600 45 0 700 180 -0.3 0 0 1 0.005\n"
    "R0_rect: 1 0 0 0 1 0 0 0 1\n"
    "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";

std::vector<std::uint8_t> float_bytes(std::initializer_list<float> v) {
  std::vector<std::uint8_t> b(v.size() * 4);
  std::memcpy(b.data(), std::data(v), b.size());
  return b;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("epnet_test_" + name);
  fs::remove_all(p);
  return p;
}

SynthConfig single_object_config() {
  SynthConfig c;
  c.min_objects = c.max_objects = 1;
  c.min_distractors = c.max_distractors = 0;
  c.min_patches = c.max_patches = 0;
  return c;
}

double cross2(const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Convex hull (monotone chain) of the projected box corners.
std::vector<std::array<double, 2>> projected_hull(const Box3D& b, const ProjectionMatrix& P) {
  std::vector<std::array<double, 2>> pts;
  const double c = std::cos(b.ry), s = std::sin(b.ry);
  for (double a : {-0.5, 0.5})
    for (double h : {-0.5, 0.5})
      for (double w : {-0.5, 0.5}) {
        const Vec3 p{b.x + a * b.l * c + w * b.w * s, b.y + h * b.h, b.z - a * b.l * s + w * b.w * c};
        const auto q = P.apply(p);
        pts.push_back({q[0] / q[2], q[1] / q[2]});
      }
  std::sort(pts.begin(), pts.end());
  std::vector<std::array<double, 2>> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

// Signed distance-like margin: positive inside, negative outside.
double hull_margin(const std::vector<std::array<double, 2>>& hull, const std::array<double, 2>& p) {
  double m = 1e300;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    m = std::min(m, cross2(a, b, p) / std::hypot(b[0] - a[0], b[1] - a[1]));
  }
  return m;
}

}  // namespace

TEST(Calib, IdentityExtrinsicsReturnP2) {
  const CalibRecord c = read_calib(kIdentityCalib);
  const ProjectionMatrix m = c.lidar_projection();
  const double p2[12] = {700, 0, 600, 45, 0, 700, 180, -0.3, 0, 0, 1, 0.005};
  for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(m.m[static_cast<std::size_t>(i)], p2[i]);
}

TEST(Calib, WhitespaceAndLineEndingsIgnored) {
  std::string crlf;
  for (char ch : kIdentityCalib) {
    if (ch == '\n') crlf += '\r';
    crlf += ch;
  }
  const std::string spaced =
      "  P2 :   700 0 600 45\t0 700 180 -0.3 0 0 1 0.005  \n\nR0_rect:1 0 0 0 1 0 0 0 1\n"
      "Tr_velo_to_cam:  1 0 0 0 0 1 0 0 0 0 1 0\nP3: 1 2 3\n";
  const CalibRecord a = read_calib(kIdentityCalib), b = read_calib(crlf), c = read_calib(spaced);
  EXPECT_EQ(a.p2.m, b.p2.m);
  EXPECT_EQ(a.p2.m, c.p2.m);
  EXPECT_EQ(a.tr, c.tr);
  EXPECT_EQ(a.r0, b.r0);
}

TEST(Calib, MissingOrShortKeyNamed) {
  const std::string missing = "P2: 700 0 600 45 0 700 180 -0.3 0 0 1 0.005\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
  try {
    read_calib(missing);
    FAIL() << "missing key accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("Tr_velo_to_cam"), std::string::npos);
  }
  std::string short_r0 = kIdentityCalib;
  short_r0.replace(short_r0.find("R0_rect: 1 0 0 0 1 0 0 0 1"), 26, "R0_rect: 1 0 0 0 1 0 0 0");
  try {
    read_calib(short_r0);
    FAIL() << "short key accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("R0_rect"), std::string::npos);
  }
}

TEST(Calib, RealCalibrationProjectsHandPoint) {
  const CalibRecord c = read_calib(read_file_text(fs::path(EPNET_TEST_DATA) / "kitti_000000_calib.txt"));
  const auto h = c.lidar_projection().apply({10.0, 1.0, -0.5});
  EXPECT_NEAR(h[0] / h[2], 533.0824659245189, 0.5);
  EXPECT_NEAR(h[1] / h[2], 209.64514352993774, 0.5);
  const Vec3 cam = c.velo_to_cam({20.0, -3.0, -1.2});
  EXPECT_NEAR(cam[0], 2.9608685664817416, 1e-9);
  EXPECT_NEAR(cam[2], 19.678080458632362, 1e-9);
  const auto q = c.p2.apply(cam);
  EXPECT_NEAR(q[0] / q[2], 712.6127593597927, 0.5);
  EXPECT_NEAR(q[1] / q[2], 216.2302483453419, 0.5);
}

TEST(Calib, CameraVelodyneInverse) {
  const CalibRecord c = read_calib(read_file_text(fs::path(EPNET_TEST_DATA) / "kitti_000000_calib.txt"));
  Rng rng(41);
  for (int k = 0; k < 100; ++k) {
    const Vec3 p{rng.uniform(0, 60), rng.uniform(-20, 20), rng.uniform(-2, 2)};
    const Vec3 back = c.cam_to_velo(c.velo_to_cam(p));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(back[j], p[j], 1e-9);
  }
}

TEST(Calib, WriteReadRoundTrip) {
  const CalibRecord c = read_calib(read_file_text(fs::path(EPNET_TEST_DATA) / "kitti_000000_calib.txt"));
  const CalibRecord d = read_calib(write_calib(c));
  EXPECT_EQ(c.p2.m, d.p2.m);
  EXPECT_EQ(c.r0, d.r0);
  EXPECT_EQ(c.tr, d.tr);
}

TEST(Velodyne, EmptyInput) { EXPECT_EQ(read_velodyne({}).size(), 0u); }

TEST(Velodyne, SinglePoint) {
  const PointSet p = read_velodyne(float_bytes({1.0f, 2.0f, 3.0f, 0.5f}));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.xyz[0], (Vec3{1, 2, 3}));
  EXPECT_EQ(p.intensity[0], 0.5);
}

TEST(Velodyne, TrailingBytesRejected) {
  auto b = float_bytes({1.0f, 2.0f, 3.0f, 0.5f});
  b.push_back(0);
  EXPECT_THROW(read_velodyne(b), std::invalid_argument);
}

TEST(Velodyne, RandomRoundTripIsByteIdentical) {
  Rng rng(42);
  std::vector<std::uint8_t> bytes(16 * 500);
  for (std::size_t i = 0; i < bytes.size() / 4; ++i) {
    const float f = static_cast<float>(rng.uniform(-80, 80));
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  EXPECT_EQ(write_velodyne(read_velodyne(bytes)), bytes);
}

TEST(Crop, RangeBoundaryInclusive) {
  PointSet p;
  p.push_back({40.0, 0.0, 10.0});
  p.push_back({40.0001, 0.0, 10.0});
  const auto idx = crop_and_subsample_indices(p, {}, 1, 7);
  EXPECT_EQ(idx, std::vector<std::size_t>{0});
}

TEST(Crop, IdentityWhenCountMatches) {
  Rng rng(43);
  PointSet p;
  for (int i = 0; i < 64; ++i) p.push_back({rng.uniform(-30, 30), rng.uniform(0, 2), rng.uniform(1, 60)});
  auto idx = crop_and_subsample_indices(p, {}, 64, 9);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(idx[i], i);
}

TEST(Crop, SmallPoolPaddedWithRepeats) {
  PointSet p;
  for (int i = 0; i < 3; ++i) p.push_back({0.0, 0.0, 5.0 + i});
  const auto idx = crop_and_subsample_indices(p, {}, 10, 3);
  ASSERT_EQ(idx.size(), 10u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NE(std::find(idx.begin(), idx.begin() + 3, i), idx.begin() + 3);
}

TEST(Crop, InclusionFrequencyIsUniform) {
  const std::size_t N = 50, n = 10;
  PointSet p;
  for (std::size_t i = 0; i < N; ++i) p.push_back({0.0, 0.0, 1.0 + static_cast<double>(i)});
  std::vector<int> hits(N, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t)
    for (std::size_t i : crop_and_subsample_indices(p, {}, n, static_cast<std::uint64_t>(t) + 1)) ++hits[i];
  const double q = static_cast<double>(n) / N, sigma = std::sqrt(trials * q * (1 - q));
  for (int h : hits) EXPECT_NEAR(h, trials * q, 3 * sigma + 1e-9);
}

TEST(Crop, NoSurvivorsThrows) {
  PointSet p;
  p.push_back({100.0, 0.0, 10.0});
  EXPECT_THROW(crop_and_subsample_indices(p, {}, 4, 1), std::invalid_argument);
  EXPECT_THROW(crop_and_subsample_indices(p, {}, 0, 1), std::invalid_argument);
}

TEST(Labels, FifteenFieldRoundTrip) {
  const std::string text = "Car 0 1 -1.5 100 120 200 180 1.5 1.6 3.9 2 1.65 20 0.25\nDontCare -1 -1 -10 1 2 3 4 -1 -1 -1 -1000 -1000 -1000 -10\n";
  const auto labels = read_labels(text);
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].type, "Car");
  EXPECT_EQ(labels[0].occlusion, 1);
  EXPECT_DOUBLE_EQ(labels[0].bbox[3], 180);
  const Box3D b = labels[0].to_box();
  EXPECT_DOUBLE_EQ(b.y, 1.65 - 0.75);
  EXPECT_DOUBLE_EQ(b.l, 3.9);
  EXPECT_FALSE(labels[1].is_object());
  EXPECT_EQ(read_labels(write_labels(labels))[0].to_box().ry, 0.25);
  EXPECT_EQ(write_labels(read_labels(write_labels(labels))), write_labels(labels));
  EXPECT_THROW(read_labels("Car 0 1 -1.5 100 120 200 180 1.5 1.6 3.9 2 1.65 20\n"), std::invalid_argument);
}

TEST(Images, PpmAndPgmRoundTrip) {
  Rng rng(44);
  Array img({5, 7, 3});
  for (double& v : img.raw()) v = static_cast<double>(rng.index(256));
  const auto bytes = write_ppm(img);
  const Array back = read_ppm(bytes);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_EQ(back.raw(), img.raw());
  EXPECT_EQ(write_ppm(back), bytes);

  std::vector<std::uint8_t> mask(35);
  for (auto& m : mask) m = rng.coin() ? 1 : 0;
  std::size_t h = 0, w = 0;
  EXPECT_EQ(read_mask_pgm(write_mask_pgm(mask, 5, 7), h, w), mask);
  EXPECT_EQ(h, 5u);
  EXPECT_EQ(w, 7u);
  EXPECT_THROW(read_ppm(write_mask_pgm(mask, 5, 7)), std::invalid_argument);
}

TEST(Synth, ZeroObjectsGiveEmptyMasks) {
  SynthConfig c;
  c.min_objects = c.max_objects = 0;
  const SceneSample s = synth_scene(c, 5);
  EXPECT_TRUE(s.boxes.empty());
  EXPECT_GT(s.points.size(), 0u);
  EXPECT_EQ(std::count(s.point_fg.begin(), s.point_fg.end(), 1), 0);
  EXPECT_EQ(std::count(s.pixel_fg.begin(), s.pixel_fg.end(), 1), 0);
}

TEST(Synth, SingleObjectMasksMatchOracles) {
  const SynthConfig c = single_object_config();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SceneSample s = synth_scene(c, seed);
    ASSERT_EQ(s.boxes.size(), 1u);
    const Box3D& b = s.boxes[0];
    std::size_t fg = 0;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (!s.point_fg[i]) continue;
      ++fg;
      EXPECT_TRUE(point_in_box(b, s.points.xyz[i], 1e-3));
    }
    EXPECT_GT(fg, 0u);
    const auto hull = projected_hull(b, s.calib.p2);
    std::size_t checked = 0;
    for (std::size_t r = 0; r < c.image_height; ++r)
      for (std::size_t col = 0; col < c.image_width; ++col) {
        const double m = hull_margin(hull, {static_cast<double>(col), static_cast<double>(r)});
        if (std::abs(m) < 1e-6) continue;
        EXPECT_EQ(s.pixel_fg[r * c.image_width + col], m > 0 ? 1 : 0) << "seed " << seed << " pixel " << r << "," << col;
        ++checked;
      }
    EXPECT_GT(checked, c.image_height * c.image_width / 2);
  }
}

TEST(Synth, DeterministicPerSeed) {
  const SynthConfig c;
  const SceneSample a = synth_scene(c, 17), b = synth_scene(c, 17), d = synth_scene(c, 18);
  EXPECT_EQ(a.points.xyz, b.points.xyz);
  EXPECT_EQ(a.image.raw(), b.image.raw());
  EXPECT_EQ(write_labels(a.labels), write_labels(b.labels));
  EXPECT_NE(a.points.xyz, d.points.xyz);
}

TEST(Synth, PointInBoxAgreesWithHalfSpaces) {
  Rng rng(45);
  for (int k = 0; k < 20; ++k) {
    const Box3D b{rng.uniform(-5, 5), rng.uniform(0, 2), rng.uniform(5, 30), rng.uniform(3, 5), rng.uniform(1, 2),
                  rng.uniform(1, 2),  rng.uniform(-3, 3)};
    const auto corners = bev_corners(b);
    for (int j = 0; j < 500; ++j) {
      const Vec3 p{b.x + rng.uniform(-3, 3), b.y + rng.uniform(-1.2, 1.2), b.z + rng.uniform(-3, 3)};
      bool inside = std::abs(p[1] - b.y) <= 0.5 * b.h;
      double side = 0.0;
      for (std::size_t e = 0; e < 4 && inside; ++e) {
        const double cr = cross2(corners[e], corners[(e + 1) % 4], {p[0], p[2]});
        if (side == 0.0) side = cr > 0 ? 1.0 : -1.0;
        inside = cr * side >= 0;
      }
      EXPECT_EQ(point_in_box(b, p), inside);
    }
  }
}

TEST(Synth, ForegroundPointsProjectIntoImage) {
  const SynthConfig c;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SceneSample s = synth_scene(c, seed);
    const PixelCoords pc = project_points(s.calib.p2, s.points, s.image_size());
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (s.point_fg[i]) {
        EXPECT_TRUE(pc.valid[i]);
      }
    }
  }
}

TEST(Dataset, WriteLoadRoundTrip) {
  const fs::path root = temp_dir("dataset");
  const SynthConfig c;
  std::vector<SceneSample> scenes;
  for (std::size_t i = 0; i < 3; ++i) {
    scenes.push_back(synth_scene(c, 100 + i));
    write_scene(root, i, scenes.back());
  }
  EXPECT_EQ(list_frames(root), (std::vector<std::size_t>{0, 1, 2}));
  for (std::size_t i = 0; i < 3; ++i) {
    const SceneSample s = load_scene(root, i);
    ASSERT_EQ(s.points.size(), scenes[i].points.size());
    for (std::size_t k = 0; k < s.points.size(); ++k)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.points.xyz[k][j], scenes[i].points.xyz[k][j], 1e-4);
    EXPECT_EQ(s.image.raw(), scenes[i].image.raw());
    EXPECT_EQ(s.pixel_fg, scenes[i].pixel_fg);
    EXPECT_EQ(s.boxes.size(), scenes[i].boxes.size());
    EXPECT_EQ(write_labels(s.labels), write_labels(scenes[i].labels));
    const auto vb = read_file_bytes(root / "velodyne" / (frame_name(i) + ".bin"));
    EXPECT_EQ(write_velodyne(read_velodyne(vb)), vb);
  }
  fs::remove_all(root);
}
