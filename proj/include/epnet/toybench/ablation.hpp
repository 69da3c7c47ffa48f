// Ablation grids: one axis, several values, one trained model per value and seed.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/toybench/train.hpp"

namespace epnet {

enum class AblationAxis { FusionMode, McLoss, BeamDensity, Perturbation, Lambda };

inline const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::FusionMode: return "fusion_mode";
    case AblationAxis::McLoss: return "mc_loss";
    case AblationAxis::BeamDensity: return "beam_density";
    case AblationAxis::Perturbation: return "perturbation";
    case AblationAxis::Lambda: return "lambda";
  }
  return "?";
}

inline AblationAxis parse_ablation_axis(const std::string& s) {
  for (AblationAxis a : {AblationAxis::FusionMode, AblationAxis::McLoss, AblationAxis::BeamDensity,
                         AblationAxis::Perturbation, AblationAxis::Lambda})
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown ablation axis '" + s + "'");
}

// Grid values:
//   fusion_mode   none | li_only | cascade | reversed | parallel
//   mc_loss       on | off
//   beam_density  keep_every (1, 4, 8, ...)
//   perturbation  gated | ungated   (clean and perturbed AP are both reported)
//   lambda        "l1,l2"; 0,0 turns the consistency loss off
inline void apply_axis_value(ExperimentConfig& cfg, AblationAxis axis, const std::string& v) {
  switch (axis) {
    case AblationAxis::FusionMode: cfg.model.fusion_mode = parse_fusion_mode(v); return;
    case AblationAxis::McLoss:
      if (v != "on" && v != "off") throw std::invalid_argument("mc_loss value must be on or off, got '" + v + "'");
      cfg.model.mc_loss = v == "on";
      return;
    case AblationAxis::BeamDensity: {
      std::size_t used = 0;
      const int k = std::stoi(v, &used);
      if (used != v.size() || k < 1) throw std::invalid_argument("beam_density value must be a positive integer, got '" + v + "'");
      cfg.data.keep_every = k;
      return;
    }
    case AblationAxis::Perturbation:
      if (v != "gated" && v != "ungated") throw std::invalid_argument("perturbation value must be gated or ungated, got '" + v + "'");
      cfg.model.gated = v == "gated";
      return;
    case AblationAxis::Lambda: {
      const auto comma = v.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("lambda value must be 'l1,l2', got '" + v + "'");
      cfg.model.mc.lambda1 = parse_real(v.substr(0, comma));
      cfg.model.mc.lambda2 = parse_real(v.substr(comma + 1));
      cfg.model.mc_loss = !(cfg.model.mc.lambda1 == 0.0 && cfg.model.mc.lambda2 == 0.0);
      return;
    }
  }
}

// Scenes and frames shared between runs with the same data settings.
class DatasetCache {
 public:
  const Dataset& get(const ExperimentConfig& cfg, bool with_perturbed) {
    const std::string skey = scene_key(cfg.data);
    auto sit = scenes_.find(skey);
    if (sit == scenes_.end()) sit = scenes_.emplace(skey, synth_scenes(cfg.data)).first;
    const std::string fkey = frame_key(cfg, with_perturbed);
    auto fit = frames_.find(fkey);
    if (fit == frames_.end()) {
      fit = frames_.emplace(fkey, std::make_unique<Dataset>(build_dataset(sit->second, cfg, with_perturbed))).first;
    }
    return *fit->second;
  }

  std::size_t scene_sets() const { return scenes_.size(); }
  std::size_t frame_sets() const { return frames_.size(); }

 private:
  static std::string scene_key(const DataConfig& d) {
    return nlohmann::json{{"synth", to_json(d.synth)}, {"train", d.train_frames}, {"eval", d.eval_frames}, {"seed", d.seed}}.dump();
  }
  static std::string frame_key(const ExperimentConfig& c, bool with_perturbed) {
    const nlohmann::json m = to_json(c.model);
    return nlohmann::json{{"data", to_json(c.data)},
                          {"sa", {m.at("sa_ratio"), m.at("sa_neighbors"), m.at("sa_radius")}},
                          {"codec", m.at("codec")},
                          {"perturbed", with_perturbed}}
        .dump();
  }

  std::map<std::string, std::vector<SceneSample>> scenes_;
  std::map<std::string, std::unique_ptr<Dataset>> frames_;
};

// Flat metric view of a report; loss parts are taken from the last epoch.
inline std::map<std::string, double> report_metrics(const TrainReport& r) {
  std::map<std::string, double> m{{"point_accuracy", r.point_accuracy},
                                  {"image_accuracy", r.image_accuracy},
                                  {"gap_mean", r.gap_mean},
                                  {"gap_variance", r.gap_variance},
                                  {"ap", r.ap},
                                  {"parameters", static_cast<double>(r.parameters)},
                                  {"steps", static_cast<double>(r.steps)}};
  if (!r.epochs.empty()) {
    const EpochLoss& e = r.epochs.back();
    m["loss_total"] = e.total;
    m["loss_cls"] = e.parts.cls;
    m["loss_reg"] = e.parts.reg;
    m["loss_ims"] = e.parts.ims;
    m["loss_mc"] = e.parts.mc;
    m["loss_ce"] = e.parts.ce;
  }
  return m;
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds, 0 for a single run
  std::vector<double> values;
};

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.values = v;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct AblationRun {
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
};

struct AblationRow {
  std::string value;
  bool failed = false;
  std::string error;
  std::vector<AblationRun> runs;
  std::map<std::string, MetricSummary> metrics;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::FusionMode;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& value) const {
    for (const AblationRow& r : rows)
      if (r.value == value) return r;
    throw std::out_of_range("ablation table has no row '" + value + "'");
  }
};

struct AblationOptions {
  DatasetCache* cache = nullptr;  // a private cache is used when null
  std::function<void(const std::string& value, std::uint64_t seed, const std::map<std::string, double>&)> on_run;
};

// One model per (value, seed); `seeds` override cfg.model.seed. A cell whose run
// throws is marked failed and the remaining cells still run.
inline AblationTable run_ablation(const ExperimentConfig& base, AblationAxis axis, const std::vector<std::string>& grid,
                                  const std::vector<std::uint64_t>& seeds, const AblationOptions& opt = {}) {
  if (grid.empty()) throw std::invalid_argument("run_ablation: empty grid");
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  DatasetCache local;
  DatasetCache& cache = opt.cache ? *opt.cache : local;
  const bool perturbed = axis == AblationAxis::Perturbation;
  AblationTable table{axis, seeds, {}};
  for (const std::string& value : grid) {
    AblationRow row;
    row.value = value;
    try {
      for (std::uint64_t seed : seeds) {
        ExperimentConfig cfg = base;
        apply_axis_value(cfg, axis, value);
        cfg.model.seed = seed;
        cfg.model.validate();
        const Dataset& ds = cache.get(cfg, perturbed);
        TrainedModel tm = train(cfg, ds.train, ds.eval);
        AblationRun run{seed, report_metrics(tm.report)};
        if (perturbed) {
          const double ap_p = evaluate(tm.model, tm.params, ds.eval_perturbed, cfg.eval).ap(cfg.data.synth.object_class);
          run.metrics["ap_perturbed"] = ap_p;
          run.metrics["ap_drop"] = tm.report.ap - ap_p;
        }
        if (opt.on_run) opt.on_run(value, seed, run.metrics);
        row.runs.push_back(std::move(run));
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    if (!row.failed) {
      std::map<std::string, std::vector<double>> cols;
      for (const AblationRun& r : row.runs)
        for (const auto& [k, v] : r.metrics) cols[k].push_back(v);
      for (const auto& [k, v] : cols) row.metrics[k] = summarize(v);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace epnet
