// Sampling and grouping primitives for the set-abstraction encoder.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "epnet/core/rng.hpp"
#include "epnet/geometry/types.hpp"

namespace epnet {

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Greedy max-min sampling from a given start index. Ties go to the lowest index.
inline std::vector<std::size_t> farthest_point_sampling_from(const PointSet& pts, std::size_t k, std::size_t start) {
  const std::size_t n = pts.size();
  if (k < 1 || k > n) {
    throw std::invalid_argument("farthest_point_sampling: k=" + std::to_string(k) + " with N=" + std::to_string(n));
  }
  if (start >= n) throw std::invalid_argument("farthest_point_sampling: start index out of range");
  std::vector<std::size_t> chosen{start};
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (chosen.size() < k) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], dist2(pts.xyz[i], pts.xyz[last]));
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    chosen.push_back(best);
    last = best;
  }
  return chosen;
}

// Start index drawn from the seeded RNG.
inline std::vector<std::size_t> farthest_point_sampling(const PointSet& pts, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > pts.size()) {
    throw std::invalid_argument("farthest_point_sampling: k=" + std::to_string(k) + " with N=" +
                                std::to_string(pts.size()));
  }
  Rng rng(seed);
  return farthest_point_sampling_from(pts, k, static_cast<std::size_t>(rng.index(pts.size())));
}

// Up to `max_neighbors` indices within `radius` of each center, nearest first
// (ties by index). An empty list means the caller falls back to the center.
inline std::vector<std::vector<std::size_t>> ball_group(const PointSet& pts, const std::vector<Vec3>& centers,
                                                        double radius, std::size_t max_neighbors) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_group: radius must be positive");
  if (max_neighbors < 1) throw std::invalid_argument("ball_group: max_neighbors must be >= 1");
  const double r2 = radius * radius;
  std::vector<std::vector<std::size_t>> groups(centers.size());
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    cand.clear();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = dist2(pts.xyz[i], centers[c]);
      if (d <= r2) cand.emplace_back(d, i);
    }
    const std::size_t m = std::min(max_neighbors, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(m), cand.end());
    for (std::size_t j = 0; j < m; ++j) groups[c].push_back(cand[j].second);
  }
  return groups;
}

struct InterpWeights {
  std::array<std::size_t, 3> index{};
  std::array<double, 3> weight{};
  int count = 0;
};

// Inverse-distance weights over the (up to) 3 nearest sources of each target.
inline std::vector<InterpWeights> three_nn_weights(const std::vector<Vec3>& targets, const std::vector<Vec3>& sources) {
  if (sources.empty()) throw std::invalid_argument("three_nn_weights: no source points");
  std::vector<InterpWeights> out(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::array<std::pair<double, std::size_t>, 3> best;
    best.fill({std::numeric_limits<double>::infinity(), 0});
    for (std::size_t s = 0; s < sources.size(); ++s) {
      std::pair<double, std::size_t> c{dist2(targets[t], sources[s]), s};
      for (auto& b : best) {
        if (c < b) std::swap(c, b);
      }
    }
    InterpWeights& iw = out[t];
    iw.count = static_cast<int>(std::min<std::size_t>(3, sources.size()));
    double sum = 0.0;
    for (int j = 0; j < iw.count; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      iw.index[uj] = best[uj].second;
      iw.weight[uj] = 1.0 / (std::sqrt(best[uj].first) + 1e-8);
      sum += iw.weight[uj];
    }
    for (int j = 0; j < iw.count; ++j) iw.weight[static_cast<std::size_t>(j)] /= sum;
  }
  return out;
}

}  // namespace epnet
