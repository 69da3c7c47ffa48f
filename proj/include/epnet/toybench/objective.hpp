// Training objective of the toy network and its gradient w.r.t. the heads.
#pragma once

#include <cmath>
#include <vector>

#include "epnet/boxes3d/iou.hpp"
#include "epnet/core/dual.hpp"
#include "epnet/losses/box_codec.hpp"
#include "epnet/losses/losses.hpp"
#include "epnet/toybench/model.hpp"

namespace epnet {

// Which terms contribute to the returned gradient. Values are always computed.
struct LossSelection {
  bool cls = true, reg = true, ims = true, mc = true, ce = true;
};

struct ObjectiveResult {
  RpnLossParts parts;
  double total = 0.0;
  ToyGrads grads;
};

// Confidence used for C_c: the two-stream average when the consistency loss is
// on and the point projects into the image, otherwise C_p.
inline double combined_confidence(const ToyModelConfig& cfg, double c_point, double c_image_pt, bool valid) {
  return cfg.mc_loss && valid ? 0.5 * (c_point + c_image_pt) : c_point;
}

inline ObjectiveResult toy_objective(const ToyModelConfig& cfg, const Frame& f, const ToyOutputs& o,
                                     const LossSelection& sel = {}) {
  const std::size_t n = f.size();
  const std::size_t H = o.c_image.dim(0), W = o.c_image.dim(1);
  const std::size_t width = cfg.codec.width();
  ObjectiveResult r;
  r.grads.c_point = Array({n, 1});
  r.grads.c_image = Array({H, W, 1});
  r.grads.c_image_pts = Array({n, 1});
  r.grads.reg = Array({n, width});

  // Point classification.
  std::size_t n_fg = 0;
  for (auto m : f.point_fg) n_fg += m;
  const double inv_fg = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_fg));
  for (std::size_t i = 0; i < n; ++i) {
    const ScalarGrad fl = focal_loss(o.c_point[i], f.point_fg[i] != 0, cfg.focal);
    r.parts.cls += fl.value * inv_fg;
    if (sel.cls) r.grads.c_point[i] += fl.grad * inv_fg;
  }

  // Image segmentation.
  std::size_t n_pfg = 0;
  for (auto m : f.pixel_fg) n_pfg += m;
  const double inv_pfg = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_pfg));
  for (std::size_t p = 0; p < H * W; ++p) {
    const ScalarGrad fl = focal_loss(o.c_image[p], f.pixel_fg[p] != 0, cfg.focal);
    r.parts.ims += fl.value * inv_pfg;
    if (sel.ims) r.grads.c_image[p] += fl.grad * inv_pfg;
  }

  // Consistency between streams.
  if (cfg.mc_loss) {
    std::vector<ConfidencePair> pairs(n);
    for (std::size_t i = 0; i < n; ++i) pairs[i] = {o.c_point[i], o.c_image_pts[i], f.coords.valid[i] != 0};
    const McLossResult mc = mc_loss(pairs, cfg.mc);
    r.parts.mc = mc.value;
    if (sel.mc)
      for (std::size_t i = 0; i < n; ++i) {
        r.grads.c_point[i] += mc.grad_point[i];
        r.grads.c_image_pts[i] += mc.grad_image[i];
      }
  }

  // Box regression and localization-aware confidence.
  std::size_t n_t = 0;
  for (const auto& t : f.targets) n_t += t ? 1 : 0;
  const double inv_t = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_t));
  std::vector<double> grow(width);
  const std::size_t off = cfg.codec.residual_offset();
  using D = Dual<7>;
  for (std::size_t i = 0; i < n; ++i) {
    if (!f.targets[i]) continue;
    const std::span<const double> row(o.reg.row(i), width);
    r.parts.reg += bin_reg_loss(row, *f.targets[i], grow, cfg.codec) * inv_t;
    if (sel.reg)
      for (std::size_t k = 0; k < width; ++k) r.grads.reg.at(i, k) += grow[k] * inv_t;
    if (!cfg.ce_loss) continue;

    const RegressionTargets pred = read_prediction(row, cfg.codec);
    std::array<D, 7> res;
    for (int k = 0; k < 7; ++k) res[static_cast<std::size_t>(k)] = D::variable(pred.residual[static_cast<std::size_t>(k)], k);
    const BoxT<D> pb = decode_box_t<D>(f.points.xyz[i], pred.bin_x, pred.bin_z, pred.bin_heading, res, cfg.codec);
    const Box3D& g = f.boxes[static_cast<std::size_t>(f.target_box[i])];
    const BoxT<D> gb{D(g.x), D(g.y), D(g.z), D(g.l), D(g.h), D(g.w), D(g.ry)};
    const D iou = cfg.ce_use_3d ? iou_3d_t(pb, gb) : iou_bev_t(pb, gb);
    const bool valid = f.coords.valid[i] != 0;
    const double cc = combined_confidence(cfg, o.c_point[i], o.c_image_pts[i], valid);
    const CeLossResult ce = ce_loss(cc, iou.v);
    r.parts.ce += ce.value * inv_t;
    if (!sel.ce) continue;
    const double s = cfg.beta * inv_t;
    if (cfg.mc_loss && valid) {
      r.grads.c_point[i] += 0.5 * s * ce.d_conf;
      r.grads.c_image_pts[i] += 0.5 * s * ce.d_conf;
    } else {
      r.grads.c_point[i] += s * ce.d_conf;
    }
    for (std::size_t k = 0; k < 7; ++k) r.grads.reg.at(i, off + k) += s * ce.d_iou * iou.d[k];
  }
  r.total = rpn_total_loss(r.parts, cfg.beta);
  return r;
}

}  // namespace epnet
