// Average precision with the precision envelope sampled at R uniform recall
// positions (R = 40 by default).
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "epnet/boxes3d/iou.hpp"

namespace epnet {

struct GroundTruth {
  Box3D box;
  std::string label = "Car";
  double truncation = 0.0;
  int occlusion = 0;
  double bbox_height = 1e9;  // 2D box height in pixels
};

enum class Difficulty { Easy, Moderate, Hard };

// KITTI bucket thresholds: min 2D height, max occlusion level, max truncation.
inline std::function<bool(const GroundTruth&)> difficulty_filter(Difficulty d) {
  struct Limits {
    double min_height;
    int max_occ;
    double max_trunc;
  };
  static constexpr Limits table[] = {{40.0, 0, 0.15}, {25.0, 1, 0.30}, {25.0, 2, 0.50}};
  const Limits lim = table[static_cast<int>(d)];
  return [lim](const GroundTruth& g) {
    return g.bbox_height >= lim.min_height && g.occlusion <= lim.max_occ && g.truncation <= lim.max_trunc;
  };
}

struct EvalConfig {
  std::map<std::string, double> iou_thresh{{"Car", 0.7}, {"Pedestrian", 0.5}, {"Cyclist", 0.5}};
  double default_thresh = 0.5;
  int recall_positions = 40;
  bool use_3d = true;
  // GTs rejected by the filter are ignored: detections matched to them count
  // as neither true nor false positives.
  std::function<bool(const GroundTruth&)> gt_filter;

  double thresh_for(const std::string& label) const {
    auto it = iou_thresh.find(label);
    return it == iou_thresh.end() ? default_thresh : it->second;
  }
};

struct PrPoint {
  std::size_t tp = 0;
  std::size_t fp = 0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ClassEval {
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::vector<PrPoint> curve;
};

// Per-class evaluation; classes with zero ground truths are absent.
inline std::map<std::string, ClassEval> eval_map_detailed(const std::vector<std::vector<Detection>>& dets,
                                                          const std::vector<std::vector<GroundTruth>>& gts,
                                                          const EvalConfig& cfg = {}) {
  std::map<std::string, ClassEval> result;
  std::vector<std::string> labels;
  for (const auto& frame : gts)
    for (const auto& g : frame)
      if (std::find(labels.begin(), labels.end(), g.label) == labels.end()) labels.push_back(g.label);
  std::sort(labels.begin(), labels.end());

  const std::size_t nframes = std::max(dets.size(), gts.size());
  for (const std::string& label : labels) {
    std::size_t num_gt = 0;
    std::vector<std::vector<char>> ignored(gts.size());
    for (std::size_t f = 0; f < gts.size(); ++f) {
      ignored[f].assign(gts[f].size(), 0);
      for (std::size_t g = 0; g < gts[f].size(); ++g) {
        if (gts[f][g].label != label) continue;
        if (cfg.gt_filter && !cfg.gt_filter(gts[f][g])) {
          ignored[f][g] = 1;
        } else {
          ++num_gt;
        }
      }
    }
    if (num_gt == 0) continue;

    struct Ref {
      std::size_t frame, idx;
      double score;
    };
    std::vector<Ref> refs;
    for (std::size_t f = 0; f < dets.size(); ++f)
      for (std::size_t i = 0; i < dets[f].size(); ++i)
        if (dets[f][i].label == label) refs.push_back({f, i, dets[f][i].score});
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

    const double thr = cfg.thresh_for(label);
    std::vector<std::vector<char>> matched(nframes);
    for (std::size_t f = 0; f < gts.size(); ++f) matched[f].assign(gts[f].size(), 0);

    ClassEval ce;
    ce.num_gt = num_gt;
    std::size_t tp = 0, fp = 0;
    for (const Ref& r : refs) {
      const Box3D& db = dets[r.frame][r.idx].box;
      double best = -1.0;
      std::size_t best_g = 0;
      if (r.frame < gts.size()) {
        for (std::size_t g = 0; g < gts[r.frame].size(); ++g) {
          const GroundTruth& gt = gts[r.frame][g];
          if (gt.label != label || matched[r.frame][g]) continue;
          const double o = cfg.use_3d ? iou_3d(db, gt.box) : iou_bev(db, gt.box);
          if (o > best) {
            best = o;
            best_g = g;
          }
        }
      }
      if (best >= thr) {
        matched[r.frame][best_g] = 1;
        if (ignored[r.frame][best_g]) continue;
        ++tp;
      } else {
        ++fp;
      }
      ce.curve.push_back({tp, fp, static_cast<double>(tp) / static_cast<double>(tp + fp),
                          static_cast<double>(tp) / static_cast<double>(num_gt)});
    }

    // Envelope: best precision among operating points with recall >= k / R.
    const auto rpos = static_cast<std::size_t>(cfg.recall_positions);
    double sum = 0.0;
    for (std::size_t k = 1; k <= rpos; ++k) {
      double best_p = 0.0;
      for (const PrPoint& p : ce.curve) {
        if (p.tp * rpos >= k * num_gt) best_p = std::max(best_p, p.precision);
      }
      sum += best_p;
    }
    ce.ap = sum / static_cast<double>(rpos);
    result.emplace(label, std::move(ce));
  }
  return result;
}

inline std::map<std::string, double> eval_map_r40(const std::vector<std::vector<Detection>>& dets,
                                                  const std::vector<std::vector<GroundTruth>>& gts,
                                                  const EvalConfig& cfg = {}) {
  std::map<std::string, double> out;
  for (const auto& [label, ce] : eval_map_detailed(dets, gts, cfg)) out[label] = ce.ap;
  return out;
}

}  // namespace epnet
