// Command line front end: gradcheck, gen-data, sparsify, train, eval, ablate, perturb.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "epnet/kitti_io/dataset.hpp"
#include "epnet/toybench/gradcheck_suite.hpp"
#include "epnet/toybench/report.hpp"

namespace fs = std::filesystem;
using namespace epnet;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON experiment config");
  app->add_option("--set", c.sets, "override, e.g. model.fusion_mode=li_only (repeatable)");
  app->add_option("--seed", c.seed, "model seed (overrides model.seed)");
  app->add_option("-o,--out", c.out, "output file (stdout when omitted)");
  app->add_option("--format", c.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
}

ExperimentConfig load_config(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config.empty()) {
    std::ifstream is(c.config);
    if (!is) throw std::runtime_error("cannot open config " + c.config);
    j = nlohmann::json::parse(is);
  }
  for (const std::string& s : c.sets) apply_override(j, s);
  ExperimentConfig cfg = experiment_from_json(j);
  if (c.seed) cfg.model.seed = *c.seed;
  return cfg;
}

void emit(const Common& c, const std::string& body) {
  if (c.out.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream os(c.out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + c.out);
  os << body;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void log(const std::string& msg) { std::cerr << msg << '\n'; }

Dataset load_dataset(const ExperimentConfig& cfg, bool perturbed) {
  log("building " + std::to_string(cfg.data.train_frames) + "+" + std::to_string(cfg.data.eval_frames) + " frames");
  return build_dataset(synth_scenes(cfg.data), cfg, perturbed);
}

ParamStore load_checkpoint(const std::string& path, const ToyModel& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  ParamStore s = ParamStore::load(is);
  ParamStore ref;
  model.init(ref);
  if (s.names() != ref.names()) throw std::runtime_error("checkpoint " + path + " does not match the configured model");
  for (const std::string& n : ref.names()) {
    if (s.value(n).shape() != ref.value(n).shape()) {
      throw std::runtime_error("checkpoint " + path + ": parameter " + n + " has shape " + shape_str(s.value(n).shape()) +
                               ", model expects " + shape_str(ref.value(n).shape()));
    }
  }
  return s;
}

void save_checkpoint(const std::string& path, const ParamStore& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  s.save(os);
}

void write_dump(const std::string& path, const std::vector<std::vector<Detection>>& dets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dump " + path);
  write_detections(os, dets);
}

std::string classes_output(const Common& c, const std::map<std::string, ClassEval>& classes, const RunStamp& st,
                           std::size_t frames) {
  if (c.format == "csv") return class_eval_csv(classes, st);
  nlohmann::json jc = nlohmann::json::object();
  for (const auto& [label, ce] : classes) jc[label] = {{"ap", ce.ap}, {"num_gt", ce.num_gt}};
  return dump_json({{"seed", st.seed}, {"config_hash", st.config_hash}, {"frames", frames}, {"classes", jc}});
}

int run_gradcheck(const Common& c, std::size_t n_seeds, bool skip_full) {
  const ExperimentConfig cfg = load_config(c);
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < n_seeds; ++k) seeds.push_back(cfg.model.seed + k);
  const auto rows = run_gradcheck_suite(seeds, !skip_full);
  const RunStamp st = stamp(cfg);
  bool ok = true;
  for (const GradCheckRow& r : rows) ok = ok && r.passed;
  if (c.format == "csv") {
    std::ostringstream os;
    os << "config_hash,op,seed,max_rel_error,tolerance,passed\n";
    for (const GradCheckRow& r : rows)
      os << st.config_hash << ',' << r.op << ',' << r.seed << ',' << fmt_real(r.max_rel_error) << ',' << fmt_real(r.tolerance)
         << ',' << (r.passed ? 1 : 0) << '\n';
    emit(c, os.str());
  } else {
    nlohmann::json jr = nlohmann::json::array();
    for (const GradCheckRow& r : rows)
      jr.push_back({{"op", r.op}, {"seed", r.seed}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance}, {"passed", r.passed}});
    emit(c, dump_json({{"seed", st.seed}, {"config_hash", st.config_hash}, {"passed", ok}, {"checks", jr}}));
  }
  return ok ? 0 : 1;
}

int run_gen_data(const Common& c, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(c);
  const auto scenes = synth_scenes(cfg.data);
  const std::uint64_t seed = cfg.data.seed;
  std::size_t objects = 0, points = 0;
  std::ostringstream csv;
  csv << "seed,config_hash,frame,split,objects,points\n";
  const std::string hash = config_hash(cfg);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!out_dir.empty()) write_scene(out_dir, i, scenes[i]);
    objects += scenes[i].boxes.size();
    points += scenes[i].points.size();
    csv << seed << ',' << hash << ',' << frame_name(i) << ',' << (i < cfg.data.train_frames ? "train" : "eval") << ','
        << scenes[i].boxes.size() << ',' << scenes[i].points.size() << '\n';
  }
  if (c.format == "csv") {
    emit(c, csv.str());
  } else {
    emit(c, dump_json({{"seed", seed},
                       {"config_hash", hash},
                       {"frames", scenes.size()},
                       {"train_frames", cfg.data.train_frames},
                       {"eval_frames", cfg.data.eval_frames},
                       {"objects", objects},
                       {"points", points}}));
  }
  return 0;
}

std::size_t occupied_beams(const PointSet& velo) {
  const BeamConfig bc;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(bc.source_beams), 0);
  for (const Vec3& p : velo.xyz) seen[static_cast<std::size_t>(beam_index(p, bc))] = 1;
  std::size_t n = 0;
  for (auto s : seen) n += s;
  return n;
}

// A single .bin, or every .bin in a directory written under `out` with the same names.
int run_sparsify(const Common& c, const std::string& in, const std::string& out, int keep_every) {
  const ExperimentConfig cfg = load_config(c);
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.path().extension() == ".bin") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in);
  }
  if (files.empty()) throw std::runtime_error("no .bin files in " + in);
  const RunStamp st = stamp(cfg);
  std::ostringstream csv;
  csv << "seed,config_hash,file,keep_every,points_in,points_out,beams_in,beams_out\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const fs::path& f : files) {
    const PointSet velo = read_velodyne(read_file_bytes(f));
    const PointSet kept = beam_subsample(velo, keep_every);
    if (!out.empty()) write_file_bytes(fs::is_directory(in) ? fs::path(out) / f.filename() : fs::path(out), write_velodyne(kept));
    const std::string name = f.filename().string();
    csv << st.seed << ',' << st.config_hash << ',' << name << ',' << keep_every << ',' << velo.size() << ',' << kept.size() << ','
        << occupied_beams(velo) << ',' << occupied_beams(kept) << '\n';
    rows.push_back({{"file", name},
                    {"points_in", velo.size()},
                    {"points_out", kept.size()},
                    {"beams_in", occupied_beams(velo)},
                    {"beams_out", occupied_beams(kept)}});
  }
  if (c.format == "csv") {
    emit(c, csv.str());
  } else {
    emit(c, dump_json({{"seed", st.seed}, {"config_hash", st.config_hash}, {"keep_every", keep_every}, {"files", rows}}));
  }
  return 0;
}

int run_train(const Common& c, const std::string& ckpt, const std::string& dump) {
  const ExperimentConfig cfg = load_config(c);
  const Dataset ds = load_dataset(cfg, false);
  log("training " + std::string(to_string(cfg.model.fusion_mode)) + " for " + std::to_string(cfg.train.epochs) + " epochs");
  TrainedModel tm = train(cfg, ds.train, ds.eval);
  if (!ckpt.empty()) save_checkpoint(ckpt, tm.params);
  if (!dump.empty()) write_dump(dump, evaluate(tm.model, tm.params, ds.eval, cfg.eval).detections);
  const RunStamp st = stamp(cfg);
  emit(c, c.format == "csv" ? train_report_csv(tm.report, st) : dump_json(train_report_json(tm.report, st)));
  return 0;
}

int run_eval(const Common& c, const std::string& ckpt, const std::string& dump, const std::string& rescore, bool perturbed) {
  const ExperimentConfig cfg = load_config(c);
  const Dataset ds = load_dataset(cfg, perturbed);
  const std::vector<Frame>& frames = perturbed ? ds.eval_perturbed : ds.eval;
  std::map<std::string, ClassEval> classes;
  if (!rescore.empty()) {
    std::ifstream is(rescore, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dump " + rescore);
    classes = rescore_dump(is, frames, cfg.eval);
  } else {
    if (ckpt.empty()) throw std::runtime_error("eval needs --checkpoint or --rescore");
    const ToyModel model(cfg.model);
    const ParamStore s = load_checkpoint(ckpt, model);
    const EvalOutput out = evaluate(model, s, frames, cfg.eval);
    if (!dump.empty()) write_dump(dump, out.detections);
    classes = out.classes;
  }
  emit(c, classes_output(c, classes, stamp(cfg), frames.size()));
  return 0;
}

int run_ablate(const Common& c, const std::string& axis, const std::vector<std::string>& grid, const std::vector<std::uint64_t>& seeds) {
  const ExperimentConfig cfg = load_config(c);
  AblationOptions opt;
  opt.on_run = [](const std::string& v, std::uint64_t seed, const std::map<std::string, double>& m) {
    log(v + " seed " + std::to_string(seed) + " ap " + fmt_real(m.at("ap")));
  };
  const AblationTable t = run_ablation(cfg, parse_ablation_axis(axis), grid, seeds, opt);
  const std::string hash = config_hash(cfg);
  emit(c, c.format == "csv" ? ablation_csv(t, hash) : dump_json(to_json(t, hash)));
  for (const AblationRow& r : t.rows)
    if (r.failed) log("cell " + r.value + " failed: " + r.error);
  return 0;
}

// Corrupts a KITTI-layout dataset (or the synthetic eval scenes) and, given a
// checkpoint, reports AP on clean vs corrupted synthetic eval frames.
int run_perturb(const Common& c, const std::string& in_dir, const std::string& out_dir, const std::string& ckpt) {
  const ExperimentConfig cfg = load_config(c);
  const RunStamp st = stamp(cfg);
  nlohmann::json res = {{"seed", st.seed}, {"config_hash", st.config_hash}};
  std::ostringstream csv;
  csv << "seed,config_hash,frame,gain,points_in,points_out\n";

  std::vector<std::pair<std::size_t, SceneSample>> scenes;
  if (!in_dir.empty()) {
    for (std::size_t id : list_frames(in_dir)) scenes.emplace_back(id, load_scene(in_dir, id));
  } else {
    auto all = synth_scenes(cfg.data);
    for (std::size_t i = cfg.data.train_frames; i < all.size(); ++i) scenes.emplace_back(i, std::move(all[i]));
  }
  double gain_sum = 0.0;
  for (auto& [id, s] : scenes) {
    const std::size_t before = s.points.size();
    PerturbedScene p = perturb(s.image, s.points, s.boxes, cfg.data.perturbation, derive_seed(scene_seed(cfg.data.seed, id), 3));
    s.image = std::move(p.image);
    s.points = std::move(p.points);
    s.point_fg = point_foreground_mask(s.points, s.boxes);
    if (!out_dir.empty()) write_scene(out_dir, id, s);
    gain_sum += p.gain;
    csv << st.seed << ',' << st.config_hash << ',' << frame_name(id) << ',' << fmt_real(p.gain) << ',' << before << ','
        << s.points.size() << '\n';
  }
  res["frames"] = scenes.size();
  res["mean_gain"] = scenes.empty() ? 0.0 : gain_sum / static_cast<double>(scenes.size());

  if (!ckpt.empty()) {
    const Dataset ds = load_dataset(cfg, true);
    const ToyModel model(cfg.model);
    const ParamStore s = load_checkpoint(ckpt, model);
    const std::string label = cfg.data.synth.object_class;
    const double clean = evaluate(model, s, ds.eval, cfg.eval).ap(label);
    const double pert = evaluate(model, s, ds.eval_perturbed, cfg.eval).ap(label);
    res["gated"] = cfg.model.gated;
    res["ap_clean"] = clean;
    res["ap_perturbed"] = pert;
    res["ap_drop"] = clean - pert;
    csv << "# ap_clean " << fmt_real(clean) << " ap_perturbed " << fmt_real(pert) << " ap_drop " << fmt_real(clean - pert) << '\n';
  }
  emit(c, c.format == "csv" ? csv.str() : dump_json(res));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy two-stream LiDAR/camera detector"};
  app.require_subcommand(1);

  Common gc, gd, sp, tr, ev, ab, pe;

  std::size_t gc_seeds = 10;
  bool gc_skip_full = false;
  auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference audit of every layer and loss");
  add_common(cmd_gc, gc);
  cmd_gc->add_option("--seeds", gc_seeds, "number of seeds, starting at model.seed")->check(CLI::PositiveNumber);
  cmd_gc->add_flag("--skip-full-model", gc_skip_full, "omit the full-model spot check");

  std::string gd_dir;
  auto* cmd_gd = app.add_subcommand("gen-data", "synthesize scenes, optionally writing a KITTI-layout directory");
  add_common(cmd_gd, gd);
  cmd_gd->add_option("--out-dir", gd_dir, "dataset root (calib/, label_2/, velodyne/, image_2/, mask_2/)");

  std::string sp_in, sp_out;
  int sp_keep = 4;
  auto* cmd_sp = app.add_subcommand("sparsify", "keep every k-th beam of velodyne scans");
  add_common(cmd_sp, sp);
  cmd_sp->add_option("--input", sp_in, "velodyne .bin or a directory of them")->required()->check(CLI::ExistingPath);
  cmd_sp->add_option("--output", sp_out, "sparsified .bin, or output directory for a directory input");
  cmd_sp->add_option("--keep-every", sp_keep, "beam stride")->check(CLI::PositiveNumber);

  std::string tr_ckpt, tr_dump;
  auto* cmd_tr = app.add_subcommand("train", "train one model and report");
  add_common(cmd_tr, tr);
  cmd_tr->add_option("--checkpoint", tr_ckpt, "write parameters here");
  cmd_tr->add_option("--dump", tr_dump, "write eval detections here");

  std::string ev_ckpt, ev_dump, ev_rescore;
  bool ev_perturbed = false;
  auto* cmd_ev = app.add_subcommand("eval", "evaluate a checkpoint or re-score a detection dump");
  add_common(cmd_ev, ev);
  cmd_ev->add_option("--checkpoint", ev_ckpt, "parameters from train");
  cmd_ev->add_option("--dump", ev_dump, "write detections here");
  cmd_ev->add_option("--rescore", ev_rescore, "score this detection dump instead of running a model");
  cmd_ev->add_flag("--perturbed", ev_perturbed, "use perturbed eval frames");

  std::string ab_axis;
  std::vector<std::string> ab_grid;
  std::vector<std::uint64_t> ab_seeds{1, 2, 3, 4, 5};
  auto* cmd_ab = app.add_subcommand("ablate", "one model per grid value and seed");
  add_common(cmd_ab, ab);
  cmd_ab->add_option("--axis", ab_axis, "fusion_mode, mc_loss, beam_density, perturbation or lambda")->required();
  cmd_ab->add_option("--grid", ab_grid, "axis values")->required();
  cmd_ab->add_option("--seeds", ab_seeds, "model seeds");

  std::string pe_in, pe_dir, pe_ckpt;
  auto* cmd_pe = app.add_subcommand("perturb", "image gain/offset and noise-point corruption of a dataset");
  add_common(cmd_pe, pe);
  cmd_pe->add_option("--input-dir", pe_in, "KITTI-layout dataset (synthetic eval scenes when omitted)")->check(CLI::ExistingDirectory);
  cmd_pe->add_option("--out-dir", pe_dir, "write the corrupted scenes here");
  cmd_pe->add_option("--checkpoint", pe_ckpt, "also report AP on clean vs corrupted synthetic eval frames");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*cmd_gc) return run_gradcheck(gc, gc_seeds, gc_skip_full);
    if (*cmd_gd) return run_gen_data(gd, gd_dir);
    if (*cmd_sp) return run_sparsify(sp, sp_in, sp_out, sp_keep);
    if (*cmd_tr) return run_train(tr, tr_ckpt, tr_dump);
    if (*cmd_ev) return run_eval(ev, ev_ckpt, ev_dump, ev_rescore, ev_perturbed);
    if (*cmd_ab) return run_ablate(ab, ab_axis, ab_grid, ab_seeds);
    if (*cmd_pe) return run_perturb(pe, pe_in, pe_dir, pe_ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
