// Range crop and fixed-size point subsampling.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "epnet/core/rng.hpp"
#include "epnet/geometry/types.hpp"

namespace epnet {

// Closed axis-aligned intervals in the camera frame.
struct RangeConfig {
  double x_lo = -40.0, x_hi = 40.0;
  double y_lo = -1.0, y_hi = 3.0;
  double z_lo = 0.0, z_hi = 70.4;

  bool contains(const Vec3& p) const {
    return p[0] >= x_lo && p[0] <= x_hi && p[1] >= y_lo && p[1] <= y_hi && p[2] >= z_lo && p[2] <= z_hi;
  }
};

enum class CropOrder { CropThenSubsample, SubsampleThenCrop };

namespace detail {

// n indices drawn from `pool`: without replacement when the pool is large
// enough, otherwise the whole pool followed by draws with replacement.
inline std::vector<std::size_t> draw_fixed(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
  if (pool.size() >= n) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
  }
  std::vector<std::size_t> out = pool;
  while (out.size() < n) out.push_back(pool[static_cast<std::size_t>(rng.index(pool.size()))]);
  return out;
}

}  // namespace detail

// Indices (into pts) of the selected points, in selection order.
inline std::vector<std::size_t> crop_and_subsample_indices(const PointSet& pts, const RangeConfig& range,
                                                           std::size_t n_points, std::uint64_t seed,
                                                           CropOrder order = CropOrder::CropThenSubsample) {
  if (n_points < 1) throw std::invalid_argument("crop_and_subsample: n_points must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> out;
  if (order == CropOrder::CropThenSubsample) {
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (range.contains(pts.xyz[i])) inside.push_back(i);
    if (inside.empty()) throw std::invalid_argument("crop_and_subsample: no points inside the range");
    out = detail::draw_fixed(std::move(inside), n_points, rng);
  } else {
    if (pts.size() == 0) throw std::invalid_argument("crop_and_subsample: no points inside the range");
    std::vector<std::size_t> all(pts.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t i : detail::draw_fixed(std::move(all), n_points, rng))
      if (range.contains(pts.xyz[i])) out.push_back(i);
    if (out.empty()) throw std::invalid_argument("crop_and_subsample: no points inside the range");
  }
  return out;
}

inline PointSet crop_and_subsample(const PointSet& pts, const RangeConfig& range, std::size_t n_points,
                                   std::uint64_t seed, CropOrder order = CropOrder::CropThenSubsample) {
  return pts.subset(crop_and_subsample_indices(pts, range, n_points, seed, order));
}

}  // namespace epnet
