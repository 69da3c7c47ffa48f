// Finite-difference audit of every differentiable op, seeded and tabulated.
#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "epnet/core/grad_check.hpp"
#include "epnet/toybench/data.hpp"
#include "epnet/toybench/objective.hpp"

namespace epnet {

struct GradCheckRow {
  std::string op;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed = false;
};

namespace detail {

inline Array rand_array(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(s));
  for (double& v : a.raw()) v = rng.uniform(lo, hi);
  return a;
}

// Values bounded away from zero so kinks are not straddled by the stencil.
inline Array rand_away_from_zero(Shape s, Rng& rng) {
  Array a(std::move(s));
  for (double& v : a.raw()) v = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return a;
}

inline PixelCoords rand_coords(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  PixelCoords c;
  for (std::size_t i = 0; i < n; ++i) {
    // Fractional parts kept off the integer grid where bilinear taps switch.
    const double u = std::floor(rng.uniform(0.0, static_cast<double>(w - 1))) + rng.uniform(0.1, 0.9);
    const double v = std::floor(rng.uniform(0.0, static_cast<double>(h - 1))) + rng.uniform(0.1, 0.9);
    c.uv.push_back({std::min(u, static_cast<double>(w - 1)), std::min(v, static_cast<double>(h - 1))});
    c.valid.push_back(i % 5 == 4 ? 0 : 1);
  }
  return c;
}

// Worst relative error over the listed parameter coordinates (all when `coords`
// is empty) and every coordinate of each input.
struct FdProblem {
  ParamStore* store = nullptr;
  std::vector<Array*> inputs;
  std::function<double()> loss;
  std::function<std::vector<Array>()> backward;  // fills store grads, returns input grads
};

// With `coords`, each coordinate is probed at every step in `steps` and the
// closest central difference is kept.
inline double fd_worst(FdProblem& p, const std::vector<std::pair<std::string, std::size_t>>& coords = {},
                       const std::vector<double>& steps = {1e-5}) {
  ParamStore& s = *p.store;
  s.zero_grad();
  const std::vector<Array> gin = p.backward();
  double worst = 0.0;
  auto probe = [&](Array& target, const Array& analytic, const std::vector<std::size_t>& idx) {
    const Array point = target;
    auto f = [&](const Array& v) {
      target = v;
      const double r = p.loss();
      target = point;
      return r;
    };
    double best = std::numeric_limits<double>::infinity();
    for (double eps : steps) best = std::min(best, grad_check(f, point, analytic, eps, 1e-4, idx).max_rel_error);
    worst = std::max(worst, best);
  };
  if (coords.empty()) {
    for (const std::string& name : s.names()) probe(s.value(name), s.grad(name), {});
    for (std::size_t k = 0; k < p.inputs.size(); ++k) probe(*p.inputs[k], gin[k], {});
  } else {
    for (const auto& [name, i] : coords) probe(s.value(name), s.grad(name), {i});
  }
  return worst;
}

inline double scalar_fd(const std::function<double(double)>& f, double x, double analytic) {
  const double h = 1e-6;
  return relative_error(analytic, (f(x + h) - f(x - h)) / (2 * h));
}

}  // namespace detail

// Small synthetic frame used for the full-model spot check.
inline Frame gradcheck_frame(std::uint64_t seed, ExperimentConfig& cfg) {
  cfg = ExperimentConfig{};
  cfg.data.n_points = 128;
  cfg.model.seed = seed;
  cfg.model.sa_radius = 3.0;
  for (std::uint64_t k = 0;; ++k) {
    const SceneSample sc = synth_scene(cfg.data.synth, derive_seed(seed, 500 + k));
    Frame f = make_frame(sc, cfg, derive_seed(seed, 600 + k));
    std::size_t targets = 0;
    for (const auto& t : f.targets) targets += t ? 1 : 0;
    if (targets > 0 || k > 50) return f;
  }
}

// Runs every check for every seed. The full model probes 20 parameter scalars
// and is held to `full_tol`; every other op to `tol`.
inline std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds, bool full_model = true,
                                                     double tol = 1e-4, double full_tol = 1e-3) {
  using namespace detail;
  std::vector<GradCheckRow> rows;
  auto push = [&](const std::string& op, std::uint64_t seed, double err, double t) {
    rows.push_back({op, seed, err, t, err < t});
  };
  for (std::uint64_t seed : seeds) {
    Rng rng(derive_seed(seed, 77));

    {
      ParamStore s;
      Dense d{"lin", 4, 3, true};
      d.init(s, rng);
      s.value("lin.b") = rand_array({3}, rng);
      Array x = rand_array({5, 4}, rng), r = rand_array({5, 3}, rng);
      FdProblem p{&s, {&x}, [&] { return dot(d.forward(s, x).first, r); },
                  [&] {
                    auto [y, t] = d.forward(s, x);
                    return std::vector<Array>{d.backward(s, t, r)};
                  }};
      push("linear", seed, fd_worst(p), tol);
    }
    for (int stride : {1, 2}) {
      ParamStore s;
      Conv3x3 c{"conv", 2, 3, stride};
      c.init(s, rng);
      s.value("conv.b") = rand_array({3}, rng);
      Array x = rand_array({5, 6, 2}, rng);
      const Array r = rand_array(c.forward(s, x).first.shape(), rng);
      FdProblem p{&s, {&x}, [&] { return dot(c.forward(s, x).first, r); },
                  [&] {
                    auto [y, t] = c.forward(s, x);
                    return std::vector<Array>{c.backward(s, t, r)};
                  }};
      push(stride == 1 ? "conv3x3" : "conv3x3_stride2", seed, fd_worst(p), tol);
    }
    for (Activation a : {Activation::Tanh, Activation::Sigmoid, Activation::Relu}) {
      ParamStore s;
      Array x = rand_away_from_zero({4, 5}, rng), r = rand_array({4, 5}, rng);
      FdProblem p{&s, {&x}, [&] { return dot(activation_forward(a, x), r); },
                  [&] {
                    auto [y, t] = activation(a, x);
                    return std::vector<Array>{activation_backward(t, r)};
                  }};
      const char* name = a == Activation::Tanh ? "tanh" : a == Activation::Sigmoid ? "sigmoid" : "relu";
      push(name, seed, fd_worst(p), tol);
    }

    const std::size_t n = 7, h = 4, w = 5, dp = 3, di = 2, hid = 4;
    {
      ParamStore s;
      AttentionGate g{"gate", dp, di, hid};
      g.init(s, rng);
      Array a = rand_array({n, dp}, rng), b = rand_array({n, di}, rng), r = rand_array({n, 1}, rng);
      FdProblem p{&s, {&a, &b}, [&] { return dot(g.forward(s, a, b).first, r); },
                  [&] {
                    auto [y, t] = g.forward(s, a, b);
                    auto [ga, gb] = g.backward(s, t, r);
                    return std::vector<Array>{ga, gb};
                  }};
      push("attention_gate", seed, fd_worst(p), tol);
    }
    {
      ParamStore s;
      LiFusion li{"li", dp, di, hid, true};
      li.init(s, rng);
      Array fp = rand_array({n, dp}, rng), fi = rand_array({n, di}, rng), r = rand_array({n, dp}, rng);
      FdProblem p{&s, {&fp, &fi}, [&] { return dot(li.forward(s, fp, fi).first, r); },
                  [&] {
                    auto [y, t] = li.forward(s, fp, fi);
                    auto [gp, gi] = li.backward(s, t, r);
                    return std::vector<Array>{gp, gi};
                  }};
      push("li_fusion", seed, fd_worst(p), tol);
    }
    {
      ParamStore s;
      IlFusion il{"il", dp, di, hid, true};
      il.init(s, rng);
      Array fp = rand_array({n, dp}, rng), fi = rand_array({h, w, di}, rng), r = rand_array({h, w, di}, rng);
      const PixelCoords coords = rand_coords(n, h, w, rng);
      FdProblem p{&s, {&fp, &fi}, [&] { return dot(il.forward(s, fp, fi, coords).first, r); },
                  [&] {
                    auto [y, t] = il.forward(s, fp, fi, coords);
                    auto [gp, gi] = il.backward(s, t, r);
                    return std::vector<Array>{gp, gi};
                  }};
      push("il_fusion", seed, fd_worst(p), tol);
    }
    {
      ParamStore s;
      FusionBlock cb{"cb", dp, di, hid, FusionMode::Cascade, true};
      cb.init(s, rng);
      Array fp = rand_array({n, dp}, rng), fi = rand_array({h, w, di}, rng);
      const Array rp = rand_array({n, dp}, rng), ri = rand_array({h, w, di}, rng);
      const PixelCoords coords = rand_coords(n, h, w, rng);
      auto loss = [&] {
        const FusionOutput o = cb.forward(s, fp, fi, coords).first;
        return dot(o.point, rp) + dot(o.image, ri);
      };
      FdProblem p{&s, {&fp, &fi}, loss, [&] {
                    auto [o, t] = cb.forward(s, fp, fi, coords);
                    auto [gp, gi] = cb.backward(s, t, ri, rp);
                    return std::vector<Array>{gp, gi};
                  }};
      push("cb_fusion", seed, fd_worst(p), tol);
    }

    // Losses.
    {
      double worst = 0.0;
      for (bool fg : {true, false}) {
        const double x = rng.uniform(0.05, 0.95);
        worst = std::max(worst, scalar_fd([&](double v) { return focal_loss(v, fg).value; }, x, focal_loss(x, fg).grad));
      }
      push("focal_loss", seed, worst, tol);
    }
    {
      const double p = rng.uniform(0.05, 0.95), q = rng.uniform(0.05, 0.95);
      const KlGrad g = bernoulli_kl_grad(p, q);
      const double e = std::max(scalar_fd([&](double v) { return bernoulli_kl(v, q); }, p, g.dp),
                                scalar_fd([&](double v) { return bernoulli_kl(p, v); }, q, g.dq));
      push("bernoulli_kl", seed, e, tol);
    }
    {
      std::vector<ConfidencePair> pairs(8);
      for (std::size_t j = 0; j < pairs.size(); ++j) pairs[j] = {rng.uniform(0.3, 0.95), rng.uniform(0.3, 0.95), j != 3};
      const McLossResult base = mc_loss(pairs);
      double worst = 0.0;
      for (std::size_t j = 0; j < pairs.size(); ++j) {
        auto fp = [&](double v) {
          auto q = pairs;
          q[j].c_point = v;
          return mc_loss(q).value;
        };
        auto fi = [&](double v) {
          auto q = pairs;
          q[j].c_image = v;
          return mc_loss(q).value;
        };
        worst = std::max({worst, scalar_fd(fp, pairs[j].c_point, base.grad_point[j]),
                          scalar_fd(fi, pairs[j].c_image, base.grad_image[j])});
      }
      push("mc_loss", seed, worst, tol);
    }
    {
      const double c = rng.uniform(0.05, 0.95), o = rng.uniform(0.05, 0.95);
      const CeLossResult g = ce_loss(c, o);
      const double e = std::max(scalar_fd([&](double v) { return ce_loss(v, o).value; }, c, g.d_conf),
                                scalar_fd([&](double v) { return ce_loss(c, v).value; }, o, g.d_iou));
      push("ce_loss", seed, e, tol);
    }
    {
      // IoU gradient w.r.t. the seven box residuals, through the decoder.
      const BoxCodecConfig codec;
      const Vec3 pt{rng.uniform(-5.0, 5.0), 1.0, rng.uniform(10.0, 30.0)};
      const Box3D gt{pt[0] + rng.uniform(-0.5, 0.5), 1.6, pt[2] + rng.uniform(-0.5, 0.5), 3.9, 1.5, 1.6, rng.uniform(-3.0, 3.0)};
      RegressionTargets t = encode_reg_targets(pt, gt, codec);
      // Shifts exceed the size slack so neither box contains the other.
      auto signed_in = [&](double lo, double hi) { return (rng.coin() ? 1.0 : -1.0) * rng.uniform(lo, hi); };
      t.residual[kResX] += signed_in(0.6, 1.2);
      t.residual[kResZ] += signed_in(0.6, 1.2);
      t.residual[kResY] += signed_in(0.1, 0.3);
      for (std::size_t k : {kResH, kResW, kResL}) t.residual[k] += rng.uniform(-0.05, 0.05);
      t.residual[kResHeading] += signed_in(0.02, 0.1);
      using D = Dual<7>;
      std::array<D, 7> res;
      for (int k = 0; k < 7; ++k) res[static_cast<std::size_t>(k)] = D::variable(t.residual[static_cast<std::size_t>(k)], k);
      const BoxT<D> gd{D(gt.x), D(gt.y), D(gt.z), D(gt.l), D(gt.h), D(gt.w), D(gt.ry)};
      double worst = 0.0;
      for (bool use_3d : {true, false}) {
        const BoxT<D> pb = decode_box_t<D>(pt, t.bin_x, t.bin_z, t.bin_heading, res, codec);
        const D iou = use_3d ? iou_3d_t(pb, gd) : iou_bev_t(pb, gd);
        for (std::size_t k = 0; k < 7; ++k) {
          auto f = [&](double v) {
            RegressionTargets u = t;
            u.residual[k] = v;
            const Box3D b = decode_reg_targets(pt, u, codec);
            return use_3d ? iou_3d(b, gt) : iou_bev(b, gt);
          };
          worst = std::max(worst, scalar_fd(f, t.residual[k], iou.d[k]));
        }
      }
      push("iou_residual", seed, worst, tol);
    }
    {
      double worst = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double x = rand_away_from_zero({1}, rng)[0] * 2.0;
        if (std::abs(std::abs(x) - 1.0) < 0.05) continue;
        worst = std::max(worst, scalar_fd([](double v) { return smooth_l1(v).value; }, x, smooth_l1(x).grad));
      }
      push("smooth_l1", seed, worst, tol);
    }
    {
      ParamStore s;
      Array logits = rand_array({6}, rng, -2.0, 2.0);
      const std::size_t target = static_cast<std::size_t>(rng.index(6));
      std::vector<double> g(6);
      FdProblem p{&s, {&logits}, [&] {
                    std::vector<double> tmp(6);
                    return softmax_cross_entropy(logits.raw(), target, tmp);
                  },
                  [&] {
                    softmax_cross_entropy(logits.raw(), target, g);
                    return std::vector<Array>{Array({6}, g)};
                  }};
      push("softmax_cross_entropy", seed, fd_worst(p), tol);
    }
    {
      ParamStore s;
      const BoxCodecConfig codec;
      RegressionTargets t;
      t.bin_x = static_cast<int>(rng.index(static_cast<std::uint64_t>(codec.loc_bins())));
      t.bin_z = static_cast<int>(rng.index(static_cast<std::uint64_t>(codec.loc_bins())));
      t.bin_heading = static_cast<int>(rng.index(static_cast<std::uint64_t>(codec.heading_bins)));
      for (double& r : t.residual) r = rng.uniform(-0.5, 0.5);
      Array row = rand_array({codec.width()}, rng);
      for (std::size_t k = 0; k < 7; ++k) row[codec.residual_offset() + k] = t.residual[k] + rand_away_from_zero({1}, rng)[0] * 0.9;
      std::vector<double> g(codec.width());
      FdProblem p{&s, {&row}, [&] {
                    std::vector<double> tmp(codec.width());
                    return bin_reg_loss(row.raw(), t, tmp, codec);
                  },
                  [&] {
                    bin_reg_loss(row.raw(), t, g, codec);
                    return std::vector<Array>{Array({codec.width()}, g)};
                  }};
      push("bin_reg_loss", seed, fd_worst(p), tol);
    }

    if (full_model) {
      ExperimentConfig cfg;
      const Frame f = gradcheck_frame(seed, cfg);
      ToyModel model(cfg.model);
      ParamStore s;
      model.init(s);
      // Non-zero biases so no layer sits at a symmetric starting point.
      Rng brng(derive_seed(seed, 78));
      for (const std::string& name : s.names())
        if (name.ends_with(".b")) s.value(name) = rand_array(s.value(name).shape(), brng, -0.1, 0.1);
      std::vector<std::pair<std::string, std::size_t>> coords;
      const std::vector<std::string> names = s.names();
      for (int k = 0; k < 20; ++k) {
        const std::string& name = names[static_cast<std::size_t>(brng.index(names.size()))];
        coords.push_back({name, static_cast<std::size_t>(brng.index(s.value(name).size()))});
      }
      FdProblem p{&s, {}, [&] { return toy_objective(model.cfg, f, model.forward(s, f).first).total; },
                  [&] {
                    auto [o, t] = model.forward(s, f);
                    const ObjectiveResult r = toy_objective(model.cfg, f, o);
                    model.backward(s, t, f, r.grads);
                    return std::vector<Array>{};
                  }};
      // The loss at init is O(50) from clamped -log(IoU) terms, so small steps
      // hit round-off while barely-overlapping boxes need small steps.
      push("full_model", seed, fd_worst(p, coords, {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}), full_tol);
    }
  }
  return rows;
}

}  // namespace epnet
