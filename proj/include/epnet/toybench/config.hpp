// Experiment configuration for the toy two-stream detector, with a canonical
// JSON form used for config files and hashing.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/boxes3d/nms.hpp"
#include "epnet/core/param_store.hpp"
#include "epnet/fusion/fusion.hpp"
#include "epnet/geometry/augment.hpp"
#include "epnet/kitti_io/crop.hpp"
#include "epnet/kitti_io/synth.hpp"
#include "epnet/losses/box_codec.hpp"
#include "epnet/losses/losses.hpp"
#include "json.hpp"

namespace epnet {

struct ToyModelConfig {
  std::vector<std::size_t> point_channels{16, 32};  // per encoder stage
  std::vector<std::size_t> image_channels{8, 16};   // per encoder stage
  std::size_t point_head_channels = 32;
  std::size_t image_head_channels = 16;
  std::size_t gate_hidden = 0;  // 0: min(D_p, D_i) at each fusion site
  int fusion_insertions = 2;
  FusionMode fusion_mode = FusionMode::Cascade;
  bool gated = true;
  bool final_li = true;  // LI-Fusion at full resolution before the heads (skipped for mode none)

  std::size_t sa_ratio = 4;  // FPS keeps N / sa_ratio centers
  std::size_t sa_neighbors = 16;
  double sa_radius = 2.0;

  bool mc_loss = true;
  McLossConfig mc;
  bool ce_loss = true;
  bool ce_use_3d = true;
  double beta = 5.0;
  FocalConfig focal;
  BoxCodecConfig codec;
  std::uint64_t seed = 1;

  std::size_t gate_width(std::size_t dp, std::size_t di) const { return gate_hidden ? gate_hidden : std::min(dp, di); }

  void validate() const {
    if (point_channels.empty() || point_channels.size() != image_channels.size()) {
      throw std::invalid_argument("model config: point and image stages must pair up (" +
                                  std::to_string(point_channels.size()) + " vs " + std::to_string(image_channels.size()) + ")");
    }
    if (point_channels.size() != 2) throw std::invalid_argument("model config: the toy encoder has exactly 2 stages");
    if (fusion_insertions < 0 || fusion_insertions > static_cast<int>(point_channels.size())) {
      throw std::invalid_argument("model config: fusion_insertions must be in [0, " + std::to_string(point_channels.size()) + "]");
    }
    for (std::size_t c : point_channels)
      if (c == 0) throw std::invalid_argument("model config: zero point channels");
    for (std::size_t c : image_channels)
      if (c == 0) throw std::invalid_argument("model config: zero image channels");
    if (point_head_channels == 0 || image_head_channels == 0) {
      throw std::invalid_argument("model config: zero head channels");
    }
    if (sa_ratio == 0 || sa_neighbors == 0 || !(sa_radius > 0)) throw std::invalid_argument("model config: bad set-abstraction settings");
  }
};

struct DataConfig {
  SynthConfig synth;
  std::size_t train_frames = 200;
  std::size_t eval_frames = 50;
  std::uint64_t seed = 2024;
  std::size_t n_points = 512;
  RangeConfig range;
  CropOrder crop_order = CropOrder::CropThenSubsample;
  int keep_every = 1;
  PerturbationConfig perturbation;
};

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 4;
  AdamConfig adam;
};

struct ToyEvalConfig {
  double score_thresh = 0.3;
  NmsConfig nms;
  double iou_thresh = 0.5;
  bool use_3d = true;
};

struct ExperimentConfig {
  ToyModelConfig model;
  DataConfig data;
  TrainConfig train;
  ToyEvalConfig eval;
};

// ---------------------------------------------------------------------------
// JSON mapping. Every field is written; reading accepts partial objects and
// keeps defaults for absent keys. Unknown keys are rejected.

namespace detail {

using nlohmann::json;

template <class T>
void get_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string("config: ") + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw std::invalid_argument(std::string("config: unknown key ") + where + "." + it.key());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ToyModelConfig& m) {
  return {{"point_channels", m.point_channels},
          {"image_channels", m.image_channels},
          {"point_head_channels", m.point_head_channels},
          {"image_head_channels", m.image_head_channels},
          {"gate_hidden", m.gate_hidden},
          {"fusion_insertions", m.fusion_insertions},
          {"fusion_mode", to_string(m.fusion_mode)},
          {"gated", m.gated},
          {"final_li", m.final_li},
          {"sa_ratio", m.sa_ratio},
          {"sa_neighbors", m.sa_neighbors},
          {"sa_radius", m.sa_radius},
          {"mc_loss", m.mc_loss},
          {"tau", m.mc.tau},
          {"lambda1", m.mc.lambda1},
          {"lambda2", m.mc.lambda2},
          {"mc_stop_grad_average", m.mc.stop_grad_average},
          {"mc_active_normalization", m.mc.normalization == McNormalization::ActivePoints},
          {"ce_loss", m.ce_loss},
          {"ce_use_3d", m.ce_use_3d},
          {"beta", m.beta},
          {"focal_alpha", m.focal.alpha},
          {"focal_gamma", m.focal.gamma},
          {"codec", {{"loc_scope", m.codec.loc_scope},
                     {"loc_bin_size", m.codec.loc_bin_size},
                     {"heading_bins", m.codec.heading_bins},
                     {"mean_l", m.codec.mean_l},
                     {"mean_h", m.codec.mean_h},
                     {"mean_w", m.codec.mean_w}}},
          {"seed", m.seed}};
}

inline void from_json_into(const nlohmann::json& j, ToyModelConfig& m) {
  detail::reject_unknown(j,
                         {"point_channels", "image_channels", "point_head_channels", "image_head_channels", "gate_hidden",
                          "fusion_insertions", "fusion_mode", "gated", "final_li", "sa_ratio", "sa_neighbors", "sa_radius",
                          "mc_loss", "tau", "lambda1", "lambda2", "mc_stop_grad_average", "mc_active_normalization",
                          "ce_loss", "ce_use_3d", "beta", "focal_alpha", "focal_gamma", "codec", "seed"},
                         "model");
  detail::get_opt(j, "point_channels", m.point_channels);
  detail::get_opt(j, "image_channels", m.image_channels);
  detail::get_opt(j, "point_head_channels", m.point_head_channels);
  detail::get_opt(j, "image_head_channels", m.image_head_channels);
  detail::get_opt(j, "gate_hidden", m.gate_hidden);
  detail::get_opt(j, "fusion_insertions", m.fusion_insertions);
  if (j.contains("fusion_mode")) m.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  detail::get_opt(j, "gated", m.gated);
  detail::get_opt(j, "final_li", m.final_li);
  detail::get_opt(j, "sa_ratio", m.sa_ratio);
  detail::get_opt(j, "sa_neighbors", m.sa_neighbors);
  detail::get_opt(j, "sa_radius", m.sa_radius);
  detail::get_opt(j, "mc_loss", m.mc_loss);
  detail::get_opt(j, "tau", m.mc.tau);
  detail::get_opt(j, "lambda1", m.mc.lambda1);
  detail::get_opt(j, "lambda2", m.mc.lambda2);
  detail::get_opt(j, "mc_stop_grad_average", m.mc.stop_grad_average);
  if (j.contains("mc_active_normalization")) {
    m.mc.normalization = j.at("mc_active_normalization").get<bool>() ? McNormalization::ActivePoints : McNormalization::AllPoints;
  }
  detail::get_opt(j, "ce_loss", m.ce_loss);
  detail::get_opt(j, "ce_use_3d", m.ce_use_3d);
  detail::get_opt(j, "beta", m.beta);
  detail::get_opt(j, "focal_alpha", m.focal.alpha);
  detail::get_opt(j, "focal_gamma", m.focal.gamma);
  if (j.contains("codec")) {
    const auto& c = j.at("codec");
    detail::reject_unknown(c, {"loc_scope", "loc_bin_size", "heading_bins", "mean_l", "mean_h", "mean_w"}, "model.codec");
    detail::get_opt(c, "loc_scope", m.codec.loc_scope);
    detail::get_opt(c, "loc_bin_size", m.codec.loc_bin_size);
    detail::get_opt(c, "heading_bins", m.codec.heading_bins);
    detail::get_opt(c, "mean_l", m.codec.mean_l);
    detail::get_opt(c, "mean_h", m.codec.mean_h);
    detail::get_opt(c, "mean_w", m.codec.mean_w);
  }
  detail::get_opt(j, "seed", m.seed);
}

inline nlohmann::json to_json(const SynthConfig& s) {
  return {{"image_height", s.image_height}, {"image_width", s.image_width}, {"focal", s.focal},
          {"camera_height", s.camera_height}, {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_distractors", s.min_distractors}, {"max_distractors", s.max_distractors},
          {"min_patches", s.min_patches}, {"max_patches", s.max_patches}, {"object_class", s.object_class},
          {"l_range", {s.l_lo, s.l_hi}}, {"w_range", {s.w_lo, s.w_hi}}, {"h_range", {s.h_lo, s.h_hi}},
          {"z_range", {s.z_lo, s.z_hi}}, {"heading_spread", s.heading_spread}, {"fov_fraction", s.fov_fraction}, {"min_gap", s.min_gap},
          {"max_retries", s.max_retries}, {"azimuth_step_deg", s.azimuth_step_deg}, {"max_range", s.max_range},
          {"pixel_noise", s.pixel_noise}};
}

inline void from_json_into(const nlohmann::json& j, SynthConfig& s) {
  detail::reject_unknown(j,
                         {"image_height", "image_width", "focal", "camera_height", "min_objects", "max_objects",
                          "min_distractors", "max_distractors", "min_patches", "max_patches", "object_class", "l_range",
                          "w_range", "h_range", "z_range", "heading_spread", "fov_fraction", "min_gap", "max_retries", "azimuth_step_deg",
                          "max_range", "pixel_noise"},
                         "data.synth");
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " needs two values");
    lo = v[0];
    hi = v[1];
  };
  detail::get_opt(j, "image_height", s.image_height);
  detail::get_opt(j, "image_width", s.image_width);
  detail::get_opt(j, "focal", s.focal);
  detail::get_opt(j, "camera_height", s.camera_height);
  detail::get_opt(j, "min_objects", s.min_objects);
  detail::get_opt(j, "max_objects", s.max_objects);
  detail::get_opt(j, "min_distractors", s.min_distractors);
  detail::get_opt(j, "max_distractors", s.max_distractors);
  detail::get_opt(j, "min_patches", s.min_patches);
  detail::get_opt(j, "max_patches", s.max_patches);
  detail::get_opt(j, "object_class", s.object_class);
  range("l_range", s.l_lo, s.l_hi);
  range("w_range", s.w_lo, s.w_hi);
  range("h_range", s.h_lo, s.h_hi);
  range("z_range", s.z_lo, s.z_hi);
  detail::get_opt(j, "heading_spread", s.heading_spread);
  detail::get_opt(j, "fov_fraction", s.fov_fraction);
  detail::get_opt(j, "min_gap", s.min_gap);
  detail::get_opt(j, "max_retries", s.max_retries);
  detail::get_opt(j, "azimuth_step_deg", s.azimuth_step_deg);
  detail::get_opt(j, "max_range", s.max_range);
  detail::get_opt(j, "pixel_noise", s.pixel_noise);
}

inline nlohmann::json to_json(const DataConfig& d) {
  nlohmann::json p = {{"gain_lo", d.perturbation.gain_lo},
                      {"gain_hi", d.perturbation.gain_hi},
                      {"offset", d.perturbation.offset},
                      {"noise_points_per_object", d.perturbation.noise_points_per_object}};
  p["noise_radius"] = d.perturbation.noise_radius ? nlohmann::json(*d.perturbation.noise_radius) : nlohmann::json(nullptr);
  return {{"synth", to_json(d.synth)},
          {"train_frames", d.train_frames},
          {"eval_frames", d.eval_frames},
          {"seed", d.seed},
          {"n_points", d.n_points},
          {"range", {{"x", {d.range.x_lo, d.range.x_hi}}, {"y", {d.range.y_lo, d.range.y_hi}}, {"z", {d.range.z_lo, d.range.z_hi}}}},
          {"subsample_before_crop", d.crop_order == CropOrder::SubsampleThenCrop},
          {"keep_every", d.keep_every},
          {"perturbation", p}};
}

inline void from_json_into(const nlohmann::json& j, DataConfig& d) {
  detail::reject_unknown(j,
                         {"synth", "train_frames", "eval_frames", "seed", "n_points", "range", "subsample_before_crop",
                          "keep_every", "perturbation"},
                         "data");
  if (j.contains("synth")) from_json_into(j.at("synth"), d.synth);
  detail::get_opt(j, "train_frames", d.train_frames);
  detail::get_opt(j, "eval_frames", d.eval_frames);
  detail::get_opt(j, "seed", d.seed);
  detail::get_opt(j, "n_points", d.n_points);
  if (j.contains("range")) {
    const auto& r = j.at("range");
    detail::reject_unknown(r, {"x", "y", "z"}, "data.range");
    auto pair = [&](const char* k, double& lo, double& hi) {
      if (!r.contains(k)) return;
      const auto v = r.at(k).get<std::vector<double>>();
      if (v.size() != 2) throw std::invalid_argument(std::string("config: data.range.") + k + " needs two values");
      lo = v[0];
      hi = v[1];
    };
    pair("x", d.range.x_lo, d.range.x_hi);
    pair("y", d.range.y_lo, d.range.y_hi);
    pair("z", d.range.z_lo, d.range.z_hi);
  }
  if (j.contains("subsample_before_crop")) {
    d.crop_order = j.at("subsample_before_crop").get<bool>() ? CropOrder::SubsampleThenCrop : CropOrder::CropThenSubsample;
  }
  detail::get_opt(j, "keep_every", d.keep_every);
  if (j.contains("perturbation")) {
    const auto& p = j.at("perturbation");
    detail::reject_unknown(p, {"gain_lo", "gain_hi", "offset", "noise_points_per_object", "noise_radius"}, "data.perturbation");
    detail::get_opt(p, "gain_lo", d.perturbation.gain_lo);
    detail::get_opt(p, "gain_hi", d.perturbation.gain_hi);
    detail::get_opt(p, "offset", d.perturbation.offset);
    detail::get_opt(p, "noise_points_per_object", d.perturbation.noise_points_per_object);
    if (p.contains("noise_radius")) {
      if (p.at("noise_radius").is_null()) {
        d.perturbation.noise_radius.reset();
      } else {
        d.perturbation.noise_radius = p.at("noise_radius").get<double>();
      }
    }
  }
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"weight_decay", t.adam.weight_decay}};
}

inline void from_json_into(const nlohmann::json& j, TrainConfig& t) {
  detail::reject_unknown(j, {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay"}, "train");
  detail::get_opt(j, "epochs", t.epochs);
  detail::get_opt(j, "batch_size", t.batch_size);
  detail::get_opt(j, "lr", t.adam.lr);
  detail::get_opt(j, "beta1", t.adam.beta1);
  detail::get_opt(j, "beta2", t.adam.beta2);
  detail::get_opt(j, "eps", t.adam.eps);
  detail::get_opt(j, "weight_decay", t.adam.weight_decay);
}

inline nlohmann::json to_json(const ToyEvalConfig& e) {
  return {{"score_thresh", e.score_thresh},
          {"nms_pre_top_k", e.nms.pre_top_k},
          {"nms_iou", e.nms.iou_thresh},
          {"nms_keep", e.nms.keep},
          {"nms_3d", e.nms.overlap == NmsOverlap::ThreeD},
          {"iou_thresh", e.iou_thresh},
          {"use_3d", e.use_3d}};
}

inline void from_json_into(const nlohmann::json& j, ToyEvalConfig& e) {
  detail::reject_unknown(j, {"score_thresh", "nms_pre_top_k", "nms_iou", "nms_keep", "nms_3d", "iou_thresh", "use_3d"}, "eval");
  detail::get_opt(j, "score_thresh", e.score_thresh);
  detail::get_opt(j, "nms_pre_top_k", e.nms.pre_top_k);
  detail::get_opt(j, "nms_iou", e.nms.iou_thresh);
  detail::get_opt(j, "nms_keep", e.nms.keep);
  if (j.contains("nms_3d")) e.nms.overlap = j.at("nms_3d").get<bool>() ? NmsOverlap::ThreeD : NmsOverlap::Bev;
  detail::get_opt(j, "iou_thresh", e.iou_thresh);
  detail::get_opt(j, "use_3d", e.use_3d);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model", to_json(c.model)}, {"data", to_json(c.data)}, {"train", to_json(c.train)}, {"eval", to_json(c.eval)}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"model", "data", "train", "eval"}, "root");
  ExperimentConfig c;
  if (j.contains("model")) from_json_into(j.at("model"), c.model);
  if (j.contains("data")) from_json_into(j.at("data"), c.data);
  if (j.contains("train")) from_json_into(j.at("train"), c.train);
  if (j.contains("eval")) from_json_into(j.at("eval"), c.eval);
  c.model.validate();
  return c;
}

// FNV-1a over the compact canonical JSON (object keys are sorted).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

// Applies "a.b.c=value" overrides; the value is parsed as JSON, falling back
// to a plain string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override has an empty key: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace epnet
