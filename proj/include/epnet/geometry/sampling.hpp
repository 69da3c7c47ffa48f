// Bilinear sampling of H x W x D maps at continuous pixel coordinates and its
// exact adjoint, the bilinear point-to-grid scatter.
//
// Invalid points sample zeros and scatter nothing, so for any map f and point
// features g: <sample(f), g> == <f, scatter(g)>.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "epnet/core/array.hpp"
#include "epnet/core/nn.hpp"
#include "epnet/geometry/types.hpp"

namespace epnet {

struct BilinearTap {
  std::size_t index;  // flattened pixel index y * W + x
  double weight;
};

// The four neighbouring pixels of (u, v) and their weights. Taps falling off
// the grid (only possible for 1-pixel extents) carry zero weight and are
// dropped. Returns the number of taps written.
inline int bilinear_taps(double u, double v, std::size_t h, std::size_t w, std::array<BilinearTap, 4>& taps) {
  auto base = [](double c, std::size_t n) {
    if (n < 2) return std::size_t{0};
    const double f = std::floor(c);
    const auto i = static_cast<std::size_t>(std::max(0.0, f));
    return std::min(i, n - 2);
  };
  const std::size_t x0 = base(u, w), y0 = base(v, h);
  const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
  int n = 0;
  const double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const std::size_t x = x0 + static_cast<std::size_t>(dx), y = y0 + static_cast<std::size_t>(dy);
      if (x >= w || y >= h) continue;
      const double wt = wx[dx] * wy[dy];
      taps[static_cast<std::size_t>(n++)] = {y * w + x, wt};
    }
  }
  return n;
}

struct SampleTape {
  PixelCoords coords;
  std::size_t height = 0, width = 0, channels = 0;
  TapeGuard guard;
};

namespace detail {

inline void check_map(const Array& fmap, const char* who) {
  if (fmap.rank() != 3) throw std::invalid_argument(std::string(who) + ": expected HxWxD map, got " + shape_str(fmap.shape()));
}

}  // namespace detail

inline Array bilinear_sample_forward(const Array& fmap, const PixelCoords& coords) {
  detail::check_map(fmap, "bilinear_sample");
  const std::size_t h = fmap.dim(0), w = fmap.dim(1), d = fmap.dim(2);
  Array out({coords.size(), d});
  std::array<BilinearTap, 4> taps{};
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!coords.valid[i]) continue;
    const int n = bilinear_taps(coords.uv[i][0], coords.uv[i][1], h, w, taps);
    double* o = out.data() + i * d;
    for (int t = 0; t < n; ++t) {
      const double* src = fmap.data() + taps[static_cast<std::size_t>(t)].index * d;
      const double wt = taps[static_cast<std::size_t>(t)].weight;
      for (std::size_t c = 0; c < d; ++c) o[c] += wt * src[c];
    }
  }
  return out;
}

inline Array grid_scatter_forward(const Array& feats, const PixelCoords& coords, std::size_t h, std::size_t w) {
  if (feats.rank() != 2 || feats.dim(0) != coords.size()) {
    throw std::invalid_argument("grid_scatter: features " + shape_str(feats.shape()) + " vs " +
                                std::to_string(coords.size()) + " coordinates");
  }
  const std::size_t d = feats.dim(1);
  Array out({h, w, d});
  std::array<BilinearTap, 4> taps{};
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!coords.valid[i]) continue;
    const int n = bilinear_taps(coords.uv[i][0], coords.uv[i][1], h, w, taps);
    const double* src = feats.data() + i * d;
    for (int t = 0; t < n; ++t) {
      double* o = out.data() + taps[static_cast<std::size_t>(t)].index * d;
      const double wt = taps[static_cast<std::size_t>(t)].weight;
      for (std::size_t c = 0; c < d; ++c) o[c] += wt * src[c];
    }
  }
  return out;
}

inline std::pair<Array, SampleTape> bilinear_sample(const Array& fmap, const PixelCoords& coords) {
  Array y = bilinear_sample_forward(fmap, coords);
  SampleTape tape{coords, fmap.dim(0), fmap.dim(1), fmap.dim(2), {}};
  tape.guard.arm();
  return {std::move(y), std::move(tape)};
}

// Gradient w.r.t. the sampled map.
inline Array bilinear_sample_backward(SampleTape& tape, const Array& upstream) {
  tape.guard.consume("bilinear_sample_backward");
  return grid_scatter_forward(upstream, tape.coords, tape.height, tape.width);
}

inline std::pair<Array, SampleTape> grid_scatter(const Array& feats, const PixelCoords& coords, std::size_t h,
                                                 std::size_t w) {
  Array y = grid_scatter_forward(feats, coords, h, w);
  SampleTape tape{coords, h, w, feats.rank() == 2 ? feats.dim(1) : 0, {}};
  tape.guard.arm();
  return {std::move(y), std::move(tape)};
}

// Gradient w.r.t. the scattered point features.
inline Array grid_scatter_backward(SampleTape& tape, const Array& upstream) {
  tape.guard.consume("grid_scatter_backward");
  return bilinear_sample_forward(upstream, tape.coords);
}

}  // namespace epnet
