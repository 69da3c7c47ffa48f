#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "epnet/geometry/augment.hpp"
#include "epnet/geometry/beam.hpp"
#include "epnet/geometry/point_ops.hpp"
#include "epnet/geometry/projection.hpp"
#include "epnet/geometry/sampling.hpp"

using namespace epnet;

namespace {

Array random_array(Shape s, Rng& rng) {
  Array a(std::move(s));
  for (double& v : a.raw()) v = rng.uniform(-1.0, 1.0);
  return a;
}

PixelCoords one_coord(double u, double v) {
  PixelCoords c;
  c.uv.push_back({u, v});
  c.valid.push_back(1);
  return c;
}

PointSet random_cloud(std::size_t n, Rng& rng, double extent = 10.0) {
  PointSet p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)});
  return p;
}

// Exhaustive greedy max-min selection recomputing every distance from scratch.
std::vector<std::size_t> fps_oracle(const PointSet& pts, std::size_t k, std::size_t start) {
  std::vector<std::size_t> chosen{start};
  while (chosen.size() < k) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) {
        const double dx = pts.xyz[i][0] - pts.xyz[c][0], dy = pts.xyz[i][1] - pts.xyz[c][1], dz = pts.xyz[i][2] - pts.xyz[c][2];
        m = std::min(m, dx * dx + dy * dy + dz * dz);
      }
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

}  // namespace

TEST(Projection, PrincipalAxisMapsToPrincipalPoint) {
  const auto M = ProjectionMatrix::from_intrinsics(700.0, 700.0, 600.5, 180.25);
  PointSet p;
  p.push_back({0.0, 0.0, 12.0});
  const auto c = project_points(M, p, {375, 1242});
  EXPECT_DOUBLE_EQ(c.uv[0][0], 600.5);
  EXPECT_DOUBLE_EQ(c.uv[0][1], 180.25);
  EXPECT_TRUE(c.valid[0]);
}

TEST(Projection, DegenerateDepthAndOutOfBoundsMasked) {
  const auto M = ProjectionMatrix::from_intrinsics(100.0, 100.0, 50.0, 20.0);
  PointSet p;
  p.push_back({0.0, 0.0, 0.0});
  p.push_back({1.0, 0.0, -5.0});
  p.push_back({100.0, 0.0, 1.0});
  p.push_back({0.0, 0.0, 1e-7});
  const auto c = project_points(M, p, {41, 101});
  for (auto v : c.valid) EXPECT_EQ(v, 0);
  EXPECT_THROW(project_points(M, p, {0, 10}), std::invalid_argument);
}

TEST(Projection, KittiStyleMatrixMatchesHandAlgebra) {
  ProjectionMatrix P{{7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01, 0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
                      0.0, 0.0, 1.0, 2.745884e-03}};
  PointSet p;
  p.push_back({2.0, 1.5, 20.0});
  const auto c = project_points(P, p, {375, 1242});
  // (721.5377*2 + 609.5593*20 + 44.85728) / (20 + 0.002745884), etc.
  const double w = 20.002745884;
  EXPECT_NEAR(c.uv[0][0], (1443.0754 + 12191.186 + 44.85728) / w, 1e-9);
  EXPECT_NEAR(c.uv[0][1], (1082.30655 + 3457.08 + 0.2163791) / w, 1e-9);
}

TEST(Projection, ScaleInvariantInHomogeneousCoordinates) {
  Rng rng(4);
  ProjectionMatrix P = ProjectionMatrix::from_intrinsics(80.0, 80.0, 79.5, 23.5);
  P.m[3] = 0.3;
  P.m[11] = 0.01;
  ProjectionMatrix Q = P;
  for (double& v : Q.m) v *= 3.7;
  PointSet pts;
  for (int i = 0; i < 50; ++i) pts.push_back({rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(1, 30)});
  const auto a = project_points(P, pts, {48, 160}), b = project_points(Q, pts, {48, 160});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(a.valid[i], b.valid[i]);
    EXPECT_NEAR(a.uv[i][0], b.uv[i][0], 1e-10);
    EXPECT_NEAR(a.uv[i][1], b.uv[i][1], 1e-10);
  }
}

TEST(Projection, ScaleCoordsClampsValidPoints) {
  PixelCoords c = one_coord(159.0, 47.0);
  const auto s = scale_coords(c, 4.0, {12, 40});
  EXPECT_DOUBLE_EQ(s.uv[0][0], 39.0);
  EXPECT_DOUBLE_EQ(s.uv[0][1], 11.0);
  const auto t = scale_coords(one_coord(8.0, 4.0), 2.0, {24, 80});
  EXPECT_DOUBLE_EQ(t.uv[0][0], 4.0);
  EXPECT_DOUBLE_EQ(t.uv[0][1], 2.0);
}

TEST(BilinearSample, OnGridPixelReturnsThatPixel) {
  Rng rng(1);
  Array f = random_array({4, 5, 3}, rng);
  const Array s = bilinear_sample_forward(f, one_coord(3.0, 2.0));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(s.at(0, c), f.at(2, 3, c));
  const Array e = bilinear_sample_forward(f, one_coord(4.0, 3.0));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(e.at(0, c), f.at(3, 4, c));
}

TEST(BilinearSample, CellCenterIsMean) {
  Rng rng(2);
  Array f = random_array({3, 3, 2}, rng);
  const Array s = bilinear_sample_forward(f, one_coord(0.5, 1.5));
  for (std::size_t c = 0; c < 2; ++c)
    EXPECT_NEAR(s.at(0, c), 0.25 * (f.at(1, 0, c) + f.at(1, 1, c) + f.at(2, 0, c) + f.at(2, 1, c)), 1e-15);
}

TEST(BilinearSample, MatchesFourTermFormula) {
  Rng rng(3);
  Array f = random_array({6, 7, 2}, rng);
  for (int t = 0; t < 20; ++t) {
    const double u = rng.uniform(0.0, 6.0), v = rng.uniform(0.0, 5.0);
    const double x0 = std::floor(u), y0 = std::floor(v), a = u - x0, b = v - y0;
    const auto X = static_cast<std::size_t>(x0), Y = static_cast<std::size_t>(y0);
    const Array s = bilinear_sample_forward(f, one_coord(u, v));
    for (std::size_t c = 0; c < 2; ++c) {
      const double ref = (1 - a) * (1 - b) * f.at(Y, X, c) + a * (1 - b) * f.at(Y, X + 1, c) +
                         (1 - a) * b * f.at(Y + 1, X, c) + a * b * f.at(Y + 1, X + 1, c);
      EXPECT_NEAR(s.at(0, c), ref, 1e-14);
    }
  }
}

TEST(BilinearSample, InvalidPointsSampleZero) {
  Array f({2, 2, 1}, 5.0);
  PixelCoords c = one_coord(0.5, 0.5);
  c.valid[0] = 0;
  EXPECT_EQ(bilinear_sample_forward(f, c)[0], 0.0);
  EXPECT_THROW(bilinear_sample_forward(Array({2, 2}), c), std::invalid_argument);
}

TEST(BilinearTaps, NonnegativeAndPartitionOfUnity) {
  Rng rng(5);
  std::array<BilinearTap, 4> taps{};
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 1 + rng.index(6), w = 1 + rng.index(6);
    const double u = rng.uniform(0.0, static_cast<double>(w - 1)), v = rng.uniform(0.0, static_cast<double>(h - 1));
    const int n = bilinear_taps(u, v, h, w, taps);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      EXPECT_GE(taps[static_cast<std::size_t>(k)].weight, 0.0);
      sum += taps[static_cast<std::size_t>(k)].weight;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(GridScatter, OnGridPointLandsOnOnePixel) {
  Array g({1, 2}, std::vector<double>{1.5, -2.0});
  const Array m = grid_scatter_forward(g, one_coord(2.0, 1.0), 3, 4);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(m.at(y, x, c), (y == 1 && x == 2) ? g.at(0, c) : 0.0);
}

TEST(GridScatter, MidCellSpreadsOverFourPixels) {
  Array g({1, 1}, std::vector<double>{2.0});
  const Array m = grid_scatter_forward(g, one_coord(1.5, 0.5), 2, 3);
  EXPECT_DOUBLE_EQ(m.at(0, 1, 0) + m.at(0, 2, 0) + m.at(1, 1, 0) + m.at(1, 2, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.at(0, 1, 0), 0.5);
  EXPECT_EQ(m.at(0, 0, 0), 0.0);
}

TEST(GridScatter, CoincidentPointsAccumulate) {
  PixelCoords c = one_coord(0.25, 0.75);
  c.uv.push_back({0.25, 0.75});
  c.valid.push_back(1);
  Array g({2, 1}, std::vector<double>{1.0, 3.0});
  const Array m = grid_scatter_forward(g, c, 2, 2);
  EXPECT_DOUBLE_EQ(m.at(1, 0, 0), 4.0 * 0.75 * 0.75);
  EXPECT_DOUBLE_EQ(m.at(0, 1, 0), 4.0 * 0.25 * 0.25);
  EXPECT_THROW(grid_scatter_forward(Array({3, 1}), c, 2, 2), std::invalid_argument);
}

TEST(SampleScatter, AdjointOnRandomTriples) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t h = 1 + rng.index(8), w = 1 + rng.index(8), d = 1 + rng.index(4), n = 1 + rng.index(30);
    Array f = random_array({h, w, d}, rng), g = random_array({n, d}, rng);
    PixelCoords c;
    for (std::size_t i = 0; i < n; ++i) {
      c.uv.push_back({rng.uniform(-1.0, static_cast<double>(w)), rng.uniform(-1.0, static_cast<double>(h))});
      c.valid.push_back(c.uv.back()[0] >= 0 && c.uv.back()[0] <= static_cast<double>(w - 1) && c.uv.back()[1] >= 0 &&
                        c.uv.back()[1] <= static_cast<double>(h - 1));
    }
    EXPECT_NEAR(dot(bilinear_sample_forward(f, c), g), dot(f, grid_scatter_forward(g, c, h, w)), 1e-10) << seed;
  }
}

TEST(SampleScatter, BackwardsAreTheAdjoints) {
  Rng rng(9);
  Array f = random_array({4, 4, 2}, rng);
  PixelCoords c = one_coord(1.3, 2.6);
  auto [s, tape] = bilinear_sample(f, c);
  Array up({1, 2}, std::vector<double>{1.0, -1.0});
  EXPECT_EQ(bilinear_sample_backward(tape, up).raw(), grid_scatter_forward(up, c, 4, 4).raw());
  EXPECT_THROW(bilinear_sample_backward(tape, up), std::logic_error);
  auto [m, tape2] = grid_scatter(up, c, 4, 4);
  EXPECT_EQ(grid_scatter_backward(tape2, f).raw(), bilinear_sample_forward(f, c).raw());
}

TEST(Fps, FullSelectionAndCollinearCase) {
  Rng rng(1);
  PointSet p = random_cloud(12, rng);
  auto all = farthest_point_sampling(p, 12, 3);
  std::set<std::size_t> s(all.begin(), all.end());
  EXPECT_EQ(s.size(), 12u);
  PointSet line;
  line.push_back({0, 0, 0});
  line.push_back({1, 0, 0});
  line.push_back({10, 0, 0});
  EXPECT_EQ(farthest_point_sampling_from(line, 2, 0), (std::vector<std::size_t>{0, 2}));
  EXPECT_THROW(farthest_point_sampling(line, 4, 0), std::invalid_argument);
  EXPECT_THROW(farthest_point_sampling(line, 0, 0), std::invalid_argument);
}

TEST(Fps, MatchesExhaustiveGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    PointSet p = random_cloud(40, rng);
    const auto got = farthest_point_sampling(p, 4, seed);
    EXPECT_EQ(got, fps_oracle(p, 4, got[0]));
    EXPECT_EQ(got, farthest_point_sampling(p, 4, seed));
  }
}

TEST(Fps, TiesGoToLowestIndex) {
  PointSet p;
  p.push_back({0, 0, 0});
  p.push_back({1, 0, 0});
  p.push_back({-1, 0, 0});
  EXPECT_EQ(farthest_point_sampling_from(p, 2, 0)[1], 1u);
}

TEST(BallGroup, SmallRadiusGivesSelf) {
  Rng rng(2);
  PointSet p = random_cloud(20, rng);
  std::vector<Vec3> centers(p.xyz.begin(), p.xyz.begin() + 5);
  const auto g = ball_group(p, centers, 1e-9, 8);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(g[c], std::vector<std::size_t>{c});
  Vec3 far{1e3, 1e3, 1e3};
  EXPECT_TRUE(ball_group(p, {far}, 1.0, 4)[0].empty());
}

TEST(BallGroup, InfiniteRadiusSortsAllPoints) {
  Rng rng(3);
  PointSet p = random_cloud(15, rng);
  const Vec3 c{0.1, 0.2, 0.3};
  const auto g = ball_group(p, {c}, std::numeric_limits<double>::infinity(), 15)[0];
  ASSERT_EQ(g.size(), 15u);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LE(dist2(p.xyz[g[i - 1]], c), dist2(p.xyz[g[i]], c));
}

TEST(BallGroup, MatchesExhaustiveScan) {
  Rng rng(4);
  PointSet p = random_cloud(60, rng, 3.0);
  std::vector<Vec3> centers;
  for (int i = 0; i < 10; ++i) centers.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
  const double r = 1.7;
  const auto g = ball_group(p, centers, r, 6);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double dx = p.xyz[i][0] - centers[c][0], dy = p.xyz[i][1] - centers[c][1], dz = p.xyz[i][2] - centers[c][2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d <= r * r) all.push_back({d, i});
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> ref;
    for (std::size_t j = 0; j < std::min<std::size_t>(6, all.size()); ++j) ref.push_back(all[j].second);
    EXPECT_EQ(g[c], ref);
  }
  EXPECT_THROW(ball_group(p, centers, 0.0, 4), std::invalid_argument);
  EXPECT_THROW(ball_group(p, centers, 1.0, 0), std::invalid_argument);
}

TEST(ThreeNn, WeightsSumToOneAndExactHitDominates) {
  Rng rng(6);
  PointSet p = random_cloud(30, rng);
  std::vector<Vec3> src(p.xyz.begin(), p.xyz.begin() + 8);
  const auto w = three_nn_weights(p.xyz, src);
  for (std::size_t t = 0; t < p.size(); ++t) {
    EXPECT_EQ(w[t].count, 3);
    EXPECT_NEAR(w[t].weight[0] + w[t].weight[1] + w[t].weight[2], 1.0, 1e-12);
  }
  EXPECT_EQ(w[2].index[0], 2u);
  EXPECT_GT(w[2].weight[0], 1.0 - 1e-6);
  const auto one = three_nn_weights(p.xyz, {src[0]});
  EXPECT_EQ(one[5].count, 1);
  EXPECT_DOUBLE_EQ(one[5].weight[0], 1.0);
  EXPECT_THROW(three_nn_weights(p.xyz, {}), std::invalid_argument);
}

TEST(Beam, IdentityAndEmpty) {
  Rng rng(7);
  PointSet p = random_cloud(100, rng);
  EXPECT_EQ(beam_subsample(p, 1).xyz, p.xyz);
  EXPECT_EQ(beam_subsample(PointSet{}, 4).size(), 0u);
  EXPECT_THROW(beam_subsample(p, 0), std::invalid_argument);
}

TEST(Beam, OnePointPerBin) {
  PointSet p;
  for (int b = 0; b < 64; ++b) {
    const double e = beam_center_deg(b) * std::numbers::pi / 180.0;
    p.push_back({20.0 * std::cos(e), 0.0, 20.0 * std::sin(e)});
  }
  for (int b = 0; b < 64; ++b) EXPECT_EQ(beam_index(p.xyz[static_cast<std::size_t>(b)]), b);
  for (int k : {2, 4, 8}) {
    const PointSet kept = beam_subsample(p, k);
    std::set<int> bins;
    for (const auto& q : kept.xyz) bins.insert(beam_index(q));
    EXPECT_EQ(kept.size(), static_cast<std::size_t>(64 / k));
    EXPECT_EQ(bins.size(), static_cast<std::size_t>(64 / k));
  }
}

TEST(Beam, OutOfSpanClampsToEndBins) {
  EXPECT_EQ(beam_index({1.0, 0.0, 5.0}), 63);
  EXPECT_EQ(beam_index({1.0, 0.0, -5.0}), 0);
}

TEST(Augment, IdentityParameters) {
  Rng rng(8);
  PointSet p = random_cloud(20, rng);
  std::vector<Box3D> boxes{{1.0, 0.5, 10.0, 4.0, 1.5, 1.6, 0.3}};
  AugmentParams id;
  id.box_scales = {1.0};
  const auto out = apply_augment(p, boxes, id);
  EXPECT_EQ(out.points.xyz, p.xyz);
  EXPECT_EQ(out.boxes[0].x, boxes[0].x);
  EXPECT_EQ(out.boxes[0].ry, boxes[0].ry);
}

TEST(Augment, FlipTwiceIsIdentity) {
  Rng rng(9);
  PointSet p = random_cloud(20, rng);
  std::vector<Box3D> boxes{{1.0, 0.5, 10.0, 4.0, 1.5, 1.6, 0.3}};
  AugmentParams f;
  f.flip = true;
  const auto once = apply_augment(p, boxes, f);
  const auto twice = apply_augment(once.points, once.boxes, f);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(twice.points.xyz[i][static_cast<std::size_t>(k)], p.xyz[i][static_cast<std::size_t>(k)]);
  EXPECT_NEAR(twice.boxes[0].ry, boxes[0].ry, 1e-15);
  EXPECT_DOUBLE_EQ(twice.boxes[0].x, boxes[0].x);
}

TEST(Augment, RotationMatchesHandMatrix) {
  PointSet p;
  p.push_back({1.0, 0.0, 0.0});
  p.push_back({0.0, 2.0, 3.0});
  AugmentParams r;
  r.rotation = std::numbers::pi / 18.0;
  const auto out = apply_augment(p, {}, r);
  const double c = std::cos(std::numbers::pi / 18.0), s = std::sin(std::numbers::pi / 18.0);
  EXPECT_NEAR(out.points.xyz[0][0], c, 1e-15);
  EXPECT_NEAR(out.points.xyz[0][2], -s, 1e-15);
  EXPECT_NEAR(out.points.xyz[1][0], 3.0 * s, 1e-15);
  EXPECT_NEAR(out.points.xyz[1][1], 2.0, 1e-15);
  EXPECT_NEAR(out.points.xyz[1][2], 3.0 * c, 1e-15);
}

TEST(Augment, PreservesPointInBoxMembership) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Box3D> boxes{{rng.uniform(-5, 5), 1.0, rng.uniform(8, 30), 4.0, 1.5, 1.7, rng.uniform(-3, 3)}};
    PointSet p;
    for (int i = 0; i < 200; ++i) {
      p.push_back({boxes[0].x + rng.uniform(-3, 3), boxes[0].y + rng.uniform(-1, 1), boxes[0].z + rng.uniform(-3, 3)});
    }
    const auto out = augment(p, boxes, seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (point_in_box(boxes[0], p.xyz[i], -1e-9)) {
        EXPECT_TRUE(point_in_box(out.boxes[0], out.points.xyz[i], 1e-9));
      }
    }
    const auto again = augment(p, boxes, seed);
    EXPECT_EQ(again.points.xyz, out.points.xyz);
  }
}

TEST(Perturb, IdentityAndDirectSubstitution) {
  Array img({2, 2, 3}, 100.0);
  PointSet p;
  p.push_back({0, 0, 5});
  PerturbationConfig id;
  id.gain_lo = id.gain_hi = 1.0;
  id.offset = 0.0;
  id.noise_points_per_object = 0;
  const auto same = perturb(img, p, {{0, 0, 5, 4, 1.5, 1.6, 0}}, id, 3);
  EXPECT_EQ(same.image.raw(), img.raw());
  EXPECT_EQ(same.points.xyz, p.xyz);
  PerturbationConfig half = id;
  half.gain_lo = half.gain_hi = 0.5;
  half.offset = 5.0;
  EXPECT_EQ(perturb(img, p, {}, half, 3).image[0], 55.0);
  PerturbationConfig bright = half;
  bright.gain_lo = bright.gain_hi = 3.0;
  EXPECT_EQ(perturb(img, p, {}, bright, 3).image[0], 255.0);
  PerturbationConfig bad;
  bad.gain_lo = 2.0;
  bad.gain_hi = 1.0;
  EXPECT_THROW(perturb(img, p, {}, bad, 1), std::invalid_argument);
}

TEST(Perturb, NoisePointsCountAndRadius) {
  Rng rng(10);
  PointSet p = random_cloud(50, rng);
  std::vector<Box3D> boxes{{1, 1, 10, 4, 1.5, 1.6, 0}, {-3, 1, 20, 3.5, 1.4, 1.7, 1}};
  PerturbationConfig cfg;
  const auto out = perturb(Array({2, 2, 3}, 10.0), p, boxes, cfg, 4);
  ASSERT_EQ(out.points.size(), 50u + 200u);
  EXPECT_GE(out.gain, 0.5);
  EXPECT_LE(out.gain, 1.5);
  for (std::size_t b = 0; b < 2; ++b) {
    const Box3D& box = boxes[b];
    const double r = 0.5 * std::sqrt(box.l * box.l + box.h * box.h + box.w * box.w);
    for (std::size_t k = 0; k < 100; ++k) {
      const Vec3& q = out.points.xyz[50 + b * 100 + k];
      EXPECT_LE(std::sqrt(dist2(q, {box.x, box.y, box.z})), r + 1e-12);
    }
  }
}
