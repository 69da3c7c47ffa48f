#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "epnet/boxes3d/iou.hpp"

namespace epnet {

enum class NmsOverlap { Bev, ThreeD };

struct NmsConfig {
  std::size_t pre_top_k = 8000;
  double iou_thresh = 0.8;
  std::size_t keep = 100;
  NmsOverlap overlap = NmsOverlap::Bev;
};

// Greedy score-ordered suppression. Returns indices into `dets` in kept order.
inline std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, const NmsConfig& cfg = {}) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  if (order.size() > cfg.pre_top_k) order.resize(cfg.pre_top_k);

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= cfg.keep) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      const double o = cfg.overlap == NmsOverlap::Bev ? iou_bev(dets[idx].box, dets[k].box)
                                                      : iou_3d(dets[idx].box, dets[k].box);
      if (o > cfg.iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

inline std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsConfig& cfg = {}) {
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(dets, cfg)) out.push_back(dets[i]);
  return out;
}

}  // namespace epnet
