// JSON and CSV writers for train reports and ablation tables, and re-scoring of
// detection dumps.
#pragma once

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "epnet/boxes3d/dump.hpp"
#include "epnet/toybench/ablation.hpp"

namespace epnet {

struct RunStamp {
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline RunStamp stamp(const ExperimentConfig& cfg) { return {cfg.model.seed, config_hash(cfg)}; }

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochLoss& e : r.epochs) {
    epochs.push_back({{"total", e.total},
                      {"cls", e.parts.cls},
                      {"reg", e.parts.reg},
                      {"ims", e.parts.ims},
                      {"mc", e.parts.mc},
                      {"ce", e.parts.ce}});
  }
  return {{"epochs", epochs},
          {"point_accuracy", r.point_accuracy},
          {"image_accuracy", r.image_accuracy},
          {"gap_mean", r.gap_mean},
          {"gap_variance", r.gap_variance},
          {"ap", r.ap},
          {"batch_size", r.batch_size},
          {"parameters", r.parameters},
          {"steps", r.steps}};
}

inline nlohmann::json train_report_json(const TrainReport& r, const RunStamp& st) {
  return {{"seed", st.seed}, {"config_hash", st.config_hash}, {"report", to_json(r)}};
}

inline std::string train_report_csv(const TrainReport& r, const RunStamp& st) {
  std::ostringstream os;
  os << "seed,config_hash,epoch,total,cls,reg,ims,mc,ce\n";
  for (std::size_t i = 0; i < r.epochs.size(); ++i) {
    const EpochLoss& e = r.epochs[i];
    os << st.seed << ',' << st.config_hash << ',' << i + 1 << ',' << fmt_real(e.total) << ',' << fmt_real(e.parts.cls) << ','
       << fmt_real(e.parts.reg) << ',' << fmt_real(e.parts.ims) << ',' << fmt_real(e.parts.mc) << ',' << fmt_real(e.parts.ce)
       << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const AblationTable& t, const std::string& hash) {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationRow& row : t.rows) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : row.metrics) m[k] = {{"mean", v.mean}, {"std", v.std}, {"values", v.values}};
    nlohmann::json runs = nlohmann::json::array();
    for (const AblationRun& r : row.runs) runs.push_back({{"seed", r.seed}, {"metrics", r.metrics}});
    nlohmann::json jr = {{"value", row.value}, {"failed", row.failed}, {"metrics", m}, {"runs", runs}};
    if (row.failed) jr["error"] = row.error;
    rows.push_back(jr);
  }
  return {{"axis", to_string(t.axis)}, {"seeds", t.seeds}, {"config_hash", hash}, {"rows", rows}};
}

// One line per (row, metric); failed rows get a single line with empty values.
inline std::string ablation_csv(const AblationTable& t, const std::string& hash) {
  std::ostringstream os;
  std::string seeds;
  for (std::size_t i = 0; i < t.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(t.seeds[i]);
  os << "axis,value,seeds,config_hash,status,metric,mean,std,n\n";
  for (const AblationRow& row : t.rows) {
    const std::string head = std::string(to_string(t.axis)) + ',' + row.value + ',' + seeds + ',' + hash + ',';
    if (row.failed) {
      os << head << "failed,,,,0\n";
      continue;
    }
    for (const auto& [k, v] : row.metrics)
      os << head << "ok," << k << ',' << fmt_real(v.mean) << ',' << fmt_real(v.std) << ',' << v.values.size() << '\n';
  }
  return os.str();
}

inline std::string class_eval_csv(const std::map<std::string, ClassEval>& classes, const RunStamp& st) {
  std::ostringstream os;
  os << "seed,config_hash,class,ap,num_gt\n";
  for (const auto& [label, c] : classes) os << st.seed << ',' << st.config_hash << ',' << label << ',' << fmt_real(c.ap) << ',' << c.num_gt << '\n';
  return os.str();
}

// Scores a detection dump against the ground truth of `frames`.
inline std::map<std::string, ClassEval> rescore_dump(std::istream& dump, const std::vector<Frame>& frames, const ToyEvalConfig& e) {
  const auto dets = read_detections(dump, frames.size());
  if (dets.size() != frames.size()) {
    throw std::invalid_argument("rescore: dump references frame " + std::to_string(dets.size() - 1) + " but only " +
                                std::to_string(frames.size()) + " frames exist");
  }
  std::vector<std::vector<GroundTruth>> gts;
  for (const Frame& f : frames) gts.push_back(f.gts);
  if (frames.empty()) return {};
  return eval_map_detailed(dets, gts, box_eval_config(e));
}

}  // namespace epnet
