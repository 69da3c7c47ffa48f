// Training loop, held-out metrics and detection evaluation for the toy model.
#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/eval.hpp"
#include "epnet/boxes3d/nms.hpp"
#include "epnet/toybench/objective.hpp"

namespace epnet {

struct EpochLoss {
  RpnLossParts parts;
  double total = 0.0;
};

struct ConfidenceGap {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> values;  // |C_p - C_i| per valid held-out point
};

struct TrainReport {
  std::vector<EpochLoss> epochs;
  double point_accuracy = 0.0;
  double image_accuracy = 0.0;
  double gap_mean = 0.0;
  double gap_variance = 0.0;
  double ap = 0.0;
  std::size_t batch_size = 0;
  std::size_t parameters = 0;
  std::uint64_t steps = 0;
};

struct EvalOutput {
  std::map<std::string, ClassEval> classes;  // empty for an empty dataset
  std::vector<std::vector<Detection>> detections;

  double ap(const std::string& label = "Car") const {
    auto it = classes.find(label);
    return it == classes.end() ? 0.0 : it->second.ap;
  }
};

inline EvalConfig box_eval_config(const ToyEvalConfig& e) {
  EvalConfig c;
  c.iou_thresh.clear();
  c.default_thresh = e.iou_thresh;
  c.use_3d = e.use_3d;
  return c;
}

// Per-point proposals above the score threshold, decoded with argmax bins and
// scored by C_c, followed by NMS.
inline std::vector<Detection> frame_detections(const ToyModelConfig& m, const ToyEvalConfig& e, const Frame& f,
                                               const ToyOutputs& o, const std::string& label = "Car") {
  std::vector<Detection> props;
  const std::size_t width = m.codec.width();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double score = combined_confidence(m, o.c_point[i], o.c_image_pts[i], f.coords.valid[i] != 0);
    if (score <= e.score_thresh) continue;
    const Box3D b = decode_prediction(f.points.xyz[i], std::span<const double>(o.reg.row(i), width), m.codec);
    props.push_back({b, score, label});
  }
  return nms(props, e.nms);
}

inline EvalOutput evaluate(const ToyModel& model, const ParamStore& s, const std::vector<Frame>& frames,
                           const ToyEvalConfig& e) {
  EvalOutput out;
  if (frames.empty()) return out;
  std::vector<std::vector<GroundTruth>> gts;
  for (const Frame& f : frames) {
    auto o = model.forward(s, f).first;
    out.detections.push_back(frame_detections(model.cfg, e, f, o));
    gts.push_back(f.gts);
  }
  out.classes = eval_map_detailed(out.detections, gts, box_eval_config(e));
  return out;
}

struct HeldOutMetrics {
  double point_accuracy = 0.0;
  double image_accuracy = 0.0;
  ConfidenceGap gap;
};

inline HeldOutMetrics held_out_metrics(const ToyModel& model, const ParamStore& s, const std::vector<Frame>& frames) {
  HeldOutMetrics h;
  std::size_t pc = 0, pn = 0, ic = 0, in = 0;
  for (const Frame& f : frames) {
    auto o = model.forward(s, f).first;
    for (std::size_t i = 0; i < f.size(); ++i) {
      pc += ((o.c_point[i] > 0.5) == (f.point_fg[i] != 0)) ? 1 : 0;
      ++pn;
      if (f.coords.valid[i]) h.gap.values.push_back(std::abs(o.c_point[i] - o.c_image_pts[i]));
    }
    for (std::size_t p = 0; p < f.pixel_fg.size(); ++p) {
      ic += ((o.c_image[p] > 0.5) == (f.pixel_fg[p] != 0)) ? 1 : 0;
      ++in;
    }
  }
  h.point_accuracy = pn ? static_cast<double>(pc) / static_cast<double>(pn) : 0.0;
  h.image_accuracy = in ? static_cast<double>(ic) / static_cast<double>(in) : 0.0;
  if (!h.gap.values.empty()) {
    const double nv = static_cast<double>(h.gap.values.size());
    h.gap.mean = std::accumulate(h.gap.values.begin(), h.gap.values.end(), 0.0) / nv;
    double ss = 0.0;
    for (double v : h.gap.values) ss += (v - h.gap.mean) * (v - h.gap.mean);
    h.gap.variance = ss / nv;
  }
  return h;
}

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  AdamConfig adam;
  std::uint64_t shuffle_seed = 1;
  // Called after every optimizer step with the step index; used for audits.
  std::function<void(const ParamStore&, std::uint64_t)> on_step;
};

// Minibatch Adam over `train`. Epoch losses are the mean over frames of the
// forward pass used for that frame's update, summed in frame-index order.
inline std::vector<EpochLoss> train_epochs(const ToyModel& model, ParamStore& s, const std::vector<Frame>& train,
                                           const TrainOptions& opt) {
  if (train.empty()) throw std::invalid_argument("train: empty dataset");
  if (opt.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  std::vector<EpochLoss> epochs;
  std::vector<std::size_t> order(train.size());
  std::vector<ObjectiveResult> per_frame(train.size());
  std::uint64_t batch_id = 0;
  for (std::size_t ep = 0; ep < opt.epochs; ++ep) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.shuffle_seed, ep));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(i))]);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opt.batch_size, ++batch_id) {
      const std::size_t b1 = std::min(order.size(), b0 + opt.batch_size);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      s.zero_grad();
      for (std::size_t q = b0; q < b1; ++q) {
        const Frame& f = train[order[q]];
        auto [o, tape] = model.forward(s, f);
        ObjectiveResult r = toy_objective(model.cfg, f, o);
        if (!std::isfinite(r.total)) {
          throw std::runtime_error("train: non-finite loss in minibatch " + std::to_string(batch_id));
        }
        for (Array* g : {&r.grads.c_point, &r.grads.c_image, &r.grads.c_image_pts, &r.grads.reg}) *g *= scale;
        model.backward(s, tape, f, r.grads);
        per_frame[order[q]] = std::move(r);
      }
      s.adam_step(opt.adam);
      if (opt.on_step) opt.on_step(s, s.step());
    }
    EpochLoss e;
    const double inv = 1.0 / static_cast<double>(train.size());
    for (const ObjectiveResult& r : per_frame) {
      e.parts.cls += r.parts.cls * inv;
      e.parts.reg += r.parts.reg * inv;
      e.parts.ims += r.parts.ims * inv;
      e.parts.mc += r.parts.mc * inv;
      e.parts.ce += r.parts.ce * inv;
      e.total += r.total * inv;
    }
    epochs.push_back(e);
  }
  return epochs;
}

struct TrainedModel {
  ToyModel model;
  ParamStore params;
  TrainReport report;
};

inline TrainedModel train(const ExperimentConfig& cfg, const std::vector<Frame>& train_frames,
                          const std::vector<Frame>& eval_frames) {
  TrainedModel tm{ToyModel(cfg.model), ParamStore{}, {}};
  tm.model.init(tm.params);
  TrainOptions opt;
  opt.epochs = cfg.train.epochs;
  opt.batch_size = cfg.train.batch_size;
  opt.adam = cfg.train.adam;
  opt.shuffle_seed = derive_seed(cfg.model.seed, 99);
  tm.report.epochs = train_epochs(tm.model, tm.params, train_frames, opt);
  const HeldOutMetrics h = held_out_metrics(tm.model, tm.params, eval_frames);
  tm.report.point_accuracy = h.point_accuracy;
  tm.report.image_accuracy = h.image_accuracy;
  tm.report.gap_mean = h.gap.mean;
  tm.report.gap_variance = h.gap.variance;
  tm.report.ap = evaluate(tm.model, tm.params, eval_frames, cfg.eval).ap(cfg.data.synth.object_class);
  tm.report.batch_size = cfg.train.batch_size;
  tm.report.parameters = tm.params.scalar_count();
  tm.report.steps = tm.params.step();
  return tm;
}

}  // namespace epnet
