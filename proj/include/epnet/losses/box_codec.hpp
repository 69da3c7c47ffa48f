// Bin-based box encoding relative to a foreground point.
//
// x, z and heading are encoded as (bin, residual) with the residual measured
// from the lower bin edge in units of the bin width, so it lies in [0, 1).
// y is a plain metric offset; l, h, w are relative to the configured mean size.
//
// Prediction row layout (width = 3 * bins + 7):
//   [x bin logits | z bin logits | heading bin logits |
//    r_x, r_y, r_z, r_h, r_w, r_l, r_heading]
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "epnet/boxes3d/box.hpp"
#include "epnet/core/dual.hpp"
#include "epnet/geometry/types.hpp"
#include "epnet/losses/losses.hpp"

namespace epnet {

struct BoxCodecConfig {
  double loc_scope = 3.0;
  double loc_bin_size = 0.5;
  int heading_bins = 12;
  double mean_l = 3.9, mean_h = 1.52, mean_w = 1.63;

  int loc_bins() const { return static_cast<int>(std::lround(2.0 * loc_scope / loc_bin_size)); }
  double heading_bin_size() const { return 2.0 * std::numbers::pi / heading_bins; }
  std::size_t residual_offset() const { return static_cast<std::size_t>(2 * loc_bins() + heading_bins); }
  std::size_t width() const { return residual_offset() + 7; }
};

enum Residual : std::size_t { kResX = 0, kResY, kResZ, kResH, kResW, kResL, kResHeading };

struct RegressionTargets {
  int bin_x = 0, bin_z = 0, bin_heading = 0;
  std::array<double, 7> residual{};  // indexed by Residual
};

namespace detail {

inline int bin_of(double shifted, double size, int bins) {
  return std::clamp(static_cast<int>(std::floor(shifted / size)), 0, bins - 1);
}

}  // namespace detail

inline bool in_codec_range(const Vec3& p, const Box3D& b, const BoxCodecConfig& c) {
  const double dx = b.x - p[0], dz = b.z - p[2];
  return dx >= -c.loc_scope && dx < c.loc_scope && dz >= -c.loc_scope && dz < c.loc_scope;
}

inline RegressionTargets encode_reg_targets(const Vec3& p, const Box3D& b, const BoxCodecConfig& c = {}) {
  if (!in_codec_range(p, b, c)) throw std::invalid_argument("encode_reg_targets: point outside codec search range");
  RegressionTargets t;
  const int nb = c.loc_bins();
  const double sx = b.x - p[0] + c.loc_scope, sz = b.z - p[2] + c.loc_scope;
  t.bin_x = detail::bin_of(sx, c.loc_bin_size, nb);
  t.bin_z = detail::bin_of(sz, c.loc_bin_size, nb);
  t.residual[kResX] = (sx - t.bin_x * c.loc_bin_size) / c.loc_bin_size;
  t.residual[kResZ] = (sz - t.bin_z * c.loc_bin_size) / c.loc_bin_size;
  t.residual[kResY] = b.y - p[1];
  t.residual[kResH] = (b.h - c.mean_h) / c.mean_h;
  t.residual[kResW] = (b.w - c.mean_w) / c.mean_w;
  t.residual[kResL] = (b.l - c.mean_l) / c.mean_l;
  const double a = normalize_angle(b.ry) + std::numbers::pi;
  t.bin_heading = detail::bin_of(a, c.heading_bin_size(), c.heading_bins);
  t.residual[kResHeading] = (a - t.bin_heading * c.heading_bin_size()) / c.heading_bin_size();
  return t;
}

// Box from bins and (possibly dual-valued) residuals. Sizes are floored at 5%
// of the mean so decoded boxes stay valid.
template <class T>
BoxT<T> decode_box_t(const Vec3& p, int bin_x, int bin_z, int bin_heading, const std::array<T, 7>& r,
                     const BoxCodecConfig& c) {
  auto floor_size = [](T v, double lo) { return value_of(v) < lo ? T(lo) : v; };
  BoxT<T> b{};
  b.x = (r[kResX] + static_cast<double>(bin_x)) * c.loc_bin_size + (p[0] - c.loc_scope);
  b.z = (r[kResZ] + static_cast<double>(bin_z)) * c.loc_bin_size + (p[2] - c.loc_scope);
  b.y = r[kResY] + p[1];
  b.h = floor_size((r[kResH] + 1.0) * c.mean_h, 0.05 * c.mean_h);
  b.w = floor_size((r[kResW] + 1.0) * c.mean_w, 0.05 * c.mean_w);
  b.l = floor_size((r[kResL] + 1.0) * c.mean_l, 0.05 * c.mean_l);
  b.ry = (r[kResHeading] + static_cast<double>(bin_heading)) * c.heading_bin_size() - std::numbers::pi;
  return b;
}

inline Box3D decode_reg_targets(const Vec3& p, const RegressionTargets& t, const BoxCodecConfig& c = {}) {
  const BoxT<double> b = decode_box_t<double>(p, t.bin_x, t.bin_z, t.bin_heading, t.residual, c);
  return {b.x, b.y, b.z, b.l, b.h, b.w, normalize_angle(b.ry)};
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Argmax bins of a prediction row.
inline RegressionTargets read_prediction(std::span<const double> row, const BoxCodecConfig& c = {}) {
  if (row.size() != c.width()) throw std::invalid_argument("read_prediction: row width mismatch");
  const auto nb = static_cast<std::size_t>(c.loc_bins());
  const auto nh = static_cast<std::size_t>(c.heading_bins);
  RegressionTargets t;
  t.bin_x = static_cast<int>(argmax(row.subspan(0, nb)));
  t.bin_z = static_cast<int>(argmax(row.subspan(nb, nb)));
  t.bin_heading = static_cast<int>(argmax(row.subspan(2 * nb, nh)));
  for (std::size_t k = 0; k < 7; ++k) t.residual[k] = row[c.residual_offset() + k];
  return t;
}

inline Box3D decode_prediction(const Vec3& p, std::span<const double> row, const BoxCodecConfig& c = {}) {
  return decode_reg_targets(p, read_prediction(row, c), c);
}

// CE over the three bin groups plus smooth-L1 over all seven residuals.
// Writes d loss / d row into `grad`.
inline double bin_reg_loss(std::span<const double> row, const RegressionTargets& t, std::span<double> grad,
                           const BoxCodecConfig& c = {}) {
  if (row.size() != c.width() || grad.size() != c.width()) {
    throw std::invalid_argument("bin_reg_loss: expected width " + std::to_string(c.width()) + ", got " +
                                std::to_string(row.size()));
  }
  const auto nb = static_cast<std::size_t>(c.loc_bins());
  const auto nh = static_cast<std::size_t>(c.heading_bins);
  double loss = 0.0;
  loss += softmax_cross_entropy(row.subspan(0, nb), static_cast<std::size_t>(t.bin_x), grad.subspan(0, nb));
  loss += softmax_cross_entropy(row.subspan(nb, nb), static_cast<std::size_t>(t.bin_z), grad.subspan(nb, nb));
  loss += softmax_cross_entropy(row.subspan(2 * nb, nh), static_cast<std::size_t>(t.bin_heading), grad.subspan(2 * nb, nh));
  const std::size_t off = c.residual_offset();
  for (std::size_t k = 0; k < 7; ++k) {
    const ScalarGrad s = smooth_l1(row[off + k] - t.residual[k]);
    loss += s.value;
    grad[off + k] = s.grad;
  }
  return loss;
}

}  // namespace epnet
