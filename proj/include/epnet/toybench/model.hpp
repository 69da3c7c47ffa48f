// Two-stream toy proposal network.
//
// Geometric stream: per-point MLP -> fusion 1 -> set abstraction (FPS + ball
// group + shared MLP + max pool) -> fusion 2 -> inverse-distance feature
// propagation back to all points.
// Image stream: conv3x3/2 -> fusion 1 -> conv3x3/2 -> fusion 2 -> nearest
// upsampling of both stages, concatenated with the input image, per-pixel
// linear head.
// A final LI-Fusion at full resolution feeds the point heads.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "epnet/core/nn.hpp"
#include "epnet/core/param_store.hpp"
#include "epnet/fusion/fusion.hpp"
#include "epnet/geometry/projection.hpp"
#include "epnet/geometry/sampling.hpp"
#include "epnet/toybench/config.hpp"
#include "epnet/toybench/data.hpp"

namespace epnet {

struct ToyOutputs {
  Array c_point;      // N x 1
  Array c_image;      // H x W x 1
  Array c_image_pts;  // N x 1, C_i sampled at each point's projection
  Array reg;          // N x codec width
};

struct ToyGrads {
  Array c_point, c_image, c_image_pts, reg;  // same shapes as ToyOutputs
};

namespace detail {

// Nearest-neighbor upsampling of an h x w x c map by `factor` onto H x W.
inline Array upsample_nearest(const Array& x, std::size_t factor, std::size_t H, std::size_t W) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Array out({H, W, c});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t q = 0; q < W; ++q) {
      const std::size_t sr = std::min(r / factor, h - 1), sq = std::min(q / factor, w - 1);
      std::copy_n(x.data() + (sr * w + sq) * c, c, out.data() + (r * W + q) * c);
    }
  return out;
}

inline Array upsample_nearest_backward(const Array& g, std::size_t factor, std::size_t h, std::size_t w) {
  const std::size_t H = g.dim(0), W = g.dim(1), c = g.dim(2);
  Array out({h, w, c});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t q = 0; q < W; ++q) {
      const std::size_t sr = std::min(r / factor, h - 1), sq = std::min(q / factor, w - 1);
      double* o = out.data() + (sr * w + sq) * c;
      const double* s = g.data() + (r * W + q) * c;
      for (std::size_t k = 0; k < c; ++k) o[k] += s[k];
    }
  return out;
}

}  // namespace detail

struct ToyTape {
  std::size_t n = 0, m = 0, H = 0, W = 0, h1 = 0, w1 = 0, h2 = 0, w2 = 0;
  LinearTape p1, p2;
  ActivationTape p1_act, p2_act;
  ConvTape c1, c2;
  ActivationTape c1_act, c2_act;
  std::optional<FusionTape> f1, f2;
  std::optional<ActivationTape> f1_pt, f1_img, f2_pt, f2_img;
  LinearTape sa, sa2;
  ActivationTape sa_act, sa2_act;
  std::vector<std::size_t> sa_argmax;  // m x c2 winning row
  std::size_t sa_rows = 0;
  LinearTape fp;
  ActivationTape fp_act;
  LinearTape ih;
  ActivationTape ih_act;
  std::optional<SampleTape> fin_sample;
  std::optional<LiTape> fin;
  std::optional<ActivationTape> fin_act;
  LinearTape cls, reg1, reg2, img;
  ActivationTape cls_sig, reg1_act, img_sig;
  SampleTape cip;
};

struct ToyModel {
  ToyModelConfig cfg;

  explicit ToyModel(ToyModelConfig c) : cfg(std::move(c)) { cfg.validate(); }

  std::size_t c1() const { return cfg.point_channels[0]; }
  std::size_t c2() const { return cfg.point_channels[1]; }
  std::size_t i1() const { return cfg.image_channels[0]; }
  std::size_t i2() const { return cfg.image_channels[1]; }
  std::size_t hp() const { return cfg.point_head_channels; }
  std::size_t hi() const { return cfg.image_head_channels; }

  Dense pt1() const { return {"pt.mlp1", 3, c1(), true}; }
  Dense pt2() const { return {"pt.mlp2", c1(), c1(), true}; }
  Conv3x3 conv1() const { return {"img.conv1", 3, i1(), 2}; }
  Conv3x3 conv2() const { return {"img.conv2", i1(), i2(), 2}; }
  Dense sa() const { return {"sa.mlp1", 3 + c1(), c2(), true}; }
  Dense sa2() const { return {"sa.mlp2", c2(), c2(), true}; }
  Dense fp() const { return {"fp.mlp", c1() + c2() + 3, hp(), true}; }
  Dense img_head() const { return {"img.head", 3 + i1() + i2(), hi(), true}; }
  Dense cls() const { return {"head.cls", hp(), 1, true}; }
  Dense reg1() const { return {"head.reg1", hp(), hp(), true}; }
  Dense reg2() const { return {"head.reg2", hp(), cfg.codec.width(), true}; }
  Dense img_cls() const { return {"head.img", hi(), 1, true}; }

  FusionMode mode_at(int stage) const { return stage < cfg.fusion_insertions ? cfg.fusion_mode : FusionMode::None; }
  FusionBlock fuse1() const { return {"fuse1", c1(), i1(), cfg.gate_width(c1(), i1()), mode_at(0), cfg.gated}; }
  FusionBlock fuse2() const { return {"fuse2", c2(), i2(), cfg.gate_width(c2(), i2()), mode_at(1), cfg.gated}; }
  bool has_final() const { return cfg.final_li && cfg.fusion_mode != FusionMode::None; }
  LiFusion final_li() const { return {"final.li", hp(), hi(), cfg.gate_width(hp(), hi()), cfg.gated}; }

  void init(ParamStore& s) const {
    Rng rng(cfg.seed);
    pt1().init(s, rng);
    pt2().init(s, rng);
    conv1().init(s, rng);
    fuse1().init(s, rng);
    sa().init(s, rng);
    sa2().init(s, rng);
    conv2().init(s, rng);
    fuse2().init(s, rng);
    fp().init(s, rng);
    img_head().init(s, rng);
    if (has_final()) final_li().init(s, rng);
    cls().init(s, rng);
    reg1().init(s, rng);
    reg2().init(s, rng);
    img_cls().init(s, rng);
  }

  std::pair<ToyOutputs, ToyTape> forward(const ParamStore& s, const Frame& f) const {
    ToyTape t;
    t.n = f.size();
    t.m = f.centers.size();
    t.H = f.image.dim(0);
    t.W = f.image.dim(1);
    if (f.image.rank() != 3 || f.image.dim(2) != 3) throw std::invalid_argument("toy model: image must be H x W x 3");

    // Stage 1.
    auto [h1, tp1] = pt1().forward(s, f.point_in);
    auto [a1, ta1] = activation(Activation::Relu, h1);
    auto [h2, tp2] = pt2().forward(s, a1);
    auto [P1, ta2] = activation(Activation::Relu, h2);
    t.p1 = std::move(tp1);
    t.p1_act = std::move(ta1);
    t.p2 = std::move(tp2);
    t.p2_act = std::move(ta2);

    auto [ci1, tc1] = conv1().forward(s, f.image);
    auto [I1, tca1] = activation(Activation::Relu, ci1);
    t.c1 = std::move(tc1);
    t.c1_act = std::move(tca1);
    t.h1 = I1.dim(0);
    t.w1 = I1.dim(1);

    const PixelCoords coords1 = scale_coords(f.coords, 2.0, {t.h1, t.w1});
    auto [P1e, I1e] = fuse_stage(s, fuse1(), P1, I1, coords1, t.f1, t.f1_pt, t.f1_img);

    // Set abstraction.
    const double inv_r = 1.0 / cfg.sa_radius;
    std::size_t rows = 0;
    for (const auto& g : f.groups) rows += g.size();
    t.sa_rows = rows;
    Array X({rows, 3 + c1()});
    {
      std::size_t r = 0;
      for (std::size_t mm = 0; mm < t.m; ++mm) {
        const Vec3& cp = f.points.xyz[f.centers[mm]];
        for (std::size_t j : f.groups[mm]) {
          double* x = X.row(r++);
          for (std::size_t k = 0; k < 3; ++k) x[k] = (f.points.xyz[j][k] - cp[k]) * inv_r;
          std::copy_n(P1e.row(j), c1(), x + 3);
        }
      }
    }
    auto [ys, tsa] = sa().forward(s, X);
    auto [ya, tsa_act] = activation(Activation::Relu, ys);
    auto [ys2, tsa2] = sa2().forward(s, ya);
    auto [Y, tsa2_act] = activation(Activation::Relu, ys2);
    t.sa = std::move(tsa);
    t.sa_act = std::move(tsa_act);
    t.sa2 = std::move(tsa2);
    t.sa2_act = std::move(tsa2_act);
    Array P2({t.m, c2()});
    t.sa_argmax.assign(t.m * c2(), 0);
    {
      std::size_t r = 0;
      for (std::size_t mm = 0; mm < t.m; ++mm) {
        const std::size_t g = f.groups[mm].size();
        for (std::size_t c = 0; c < c2(); ++c) {
          std::size_t best = r;
          for (std::size_t q = r + 1; q < r + g; ++q)
            if (Y.at(q, c) > Y.at(best, c)) best = q;
          P2.at(mm, c) = Y.at(best, c);
          t.sa_argmax[mm * c2() + c] = best;
        }
        r += g;
      }
    }

    // Stage 2.
    auto [ci2, tc2] = conv2().forward(s, I1e);
    auto [I2, tca2] = activation(Activation::Relu, ci2);
    t.c2 = std::move(tc2);
    t.c2_act = std::move(tca2);
    t.h2 = I2.dim(0);
    t.w2 = I2.dim(1);
    const PixelCoords coords2 = scale_coords(f.center_coords, 4.0, {t.h2, t.w2});
    auto [P2e, I2e] = fuse_stage(s, fuse2(), P2, I2, coords2, t.f2, t.f2_pt, t.f2_img);

    // Feature propagation, with the weighted offset from the interpolating
    // centers to the point as extra input.
    Array up({t.n, c2() + 3});
    for (std::size_t i = 0; i < t.n; ++i) {
      const InterpWeights& iw = f.interp[i];
      double* o = up.row(i);
      for (int k = 0; k < iw.count; ++k) {
        const std::size_t src_i = iw.index[static_cast<std::size_t>(k)];
        const double* src = P2e.row(src_i);
        const double wk = iw.weight[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < c2(); ++c) o[c] += wk * src[c];
        const Vec3& cp = f.points.xyz[f.centers[src_i]];
        for (std::size_t d = 0; d < 3; ++d) o[c2() + d] += wk * (f.points.xyz[i][d] - cp[d]) * inv_r;
      }
    }
    auto [yfp, tfp] = fp().forward(s, concat_cols(P1e, up));
    auto [P5, tfp_act] = activation(Activation::Relu, yfp);
    t.fp = std::move(tfp);
    t.fp_act = std::move(tfp_act);

    // Image decoder.
    Array dec = concat_channels(concat_channels(f.image, detail::upsample_nearest(I1e, 2, t.H, t.W)),
                                detail::upsample_nearest(I2e, 4, t.H, t.W));
    auto [yih, tih] = img_head().forward(s, dec.reshaped({t.H * t.W, dec.dim(2)}));
    auto [I5flat, tih_act] = activation(Activation::Relu, yih);
    t.ih = std::move(tih);
    t.ih_act = std::move(tih_act);
    const Array I5 = I5flat.reshaped({t.H, t.W, hi()});

    // Final LI-Fusion.
    Array P6 = P5;
    if (has_final()) {
      auto [fi_pt, tsm] = bilinear_sample(I5, f.coords);
      auto [yl, tl] = final_li().forward(s, P5, fi_pt);
      auto [yr, tr] = activation(Activation::Relu, yl);
      P6 = std::move(yr);
      t.fin_sample = std::move(tsm);
      t.fin = std::move(tl);
      t.fin_act = std::move(tr);
    }

    // Heads.
    ToyOutputs out;
    auto [lc, tcls] = cls().forward(s, P6);
    auto [cp, tcs] = activation(Activation::Sigmoid, lc);
    out.c_point = std::move(cp);
    t.cls = std::move(tcls);
    t.cls_sig = std::move(tcs);
    auto [r1, tr1] = reg1().forward(s, P6);
    auto [r1a, tr1a] = activation(Activation::Relu, r1);
    auto [rg, tr2] = reg2().forward(s, r1a);
    out.reg = std::move(rg);
    t.reg1 = std::move(tr1);
    t.reg1_act = std::move(tr1a);
    t.reg2 = std::move(tr2);
    auto [li, timg] = img_cls().forward(s, I5flat);
    auto [ci, tis] = activation(Activation::Sigmoid, li);
    out.c_image = ci.reshaped({t.H, t.W, 1});
    t.img = std::move(timg);
    t.img_sig = std::move(tis);
    auto [cip, tcip] = bilinear_sample(out.c_image, f.coords);
    out.c_image_pts = std::move(cip);
    t.cip = std::move(tcip);
    return {std::move(out), std::move(t)};
  }

  void backward(ParamStore& s, ToyTape& t, const Frame& f, const ToyGrads& g) const {
    // Heads.
    Array g_cimg = g.c_image;
    g_cimg += bilinear_sample_backward(t.cip, g.c_image_pts);
    Array g_li = activation_backward(t.img_sig, g_cimg.reshaped({t.H * t.W, 1}));
    Array gI5flat = img_cls().backward(s, t.img, g_li);

    Array gr1a = reg2().backward(s, t.reg2, g.reg);
    Array gP6 = reg1().backward(s, t.reg1, activation_backward(t.reg1_act, gr1a));
    gP6 += cls().backward(s, t.cls, activation_backward(t.cls_sig, g.c_point));

    Array gP5 = gP6;
    if (has_final()) {
      auto [gp5, gfi] = final_li().backward(s, *t.fin, activation_backward(*t.fin_act, gP6));
      gP5 = std::move(gp5);
      gI5flat += bilinear_sample_backward(*t.fin_sample, gfi).reshaped({t.H * t.W, hi()});
    }

    // Image decoder.
    Array gdec = img_head().backward(s, t.ih, activation_backward(t.ih_act, gI5flat)).reshaped({t.H, t.W, 3 + i1() + i2()});
    auto [g01, gu2] = split_channels(gdec, 3 + i1());
    auto [g0, gu1] = split_channels(g01, 3);
    (void)g0;
    Array gI1e = detail::upsample_nearest_backward(gu1, 2, t.h1, t.w1);
    Array gI2e = detail::upsample_nearest_backward(gu2, 4, t.h2, t.w2);

    // Feature propagation.
    Array gcat = fp().backward(s, t.fp, activation_backward(t.fp_act, gP5));
    auto [gP1e, gup] = split_cols(gcat, c1());
    Array gP2e({t.m, c2()});
    for (std::size_t i = 0; i < t.n; ++i) {
      const InterpWeights& iw = f.interp[i];
      const double* gi = gup.row(i);
      for (int k = 0; k < iw.count; ++k) {
        double* o = gP2e.row(iw.index[static_cast<std::size_t>(k)]);
        const double wk = iw.weight[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < c2(); ++c) o[c] += wk * gi[c];
      }
    }

    // Stage 2.
    auto [gP2, gI2] = unfuse_stage(s, fuse2(), t.f2, t.f2_pt, t.f2_img, gP2e, gI2e);
    gI1e += conv2().backward(s, t.c2, activation_backward(t.c2_act, gI2));

    // Set abstraction.
    Array gY({t.sa_rows, c2()});
    for (std::size_t mm = 0; mm < t.m; ++mm)
      for (std::size_t c = 0; c < c2(); ++c) gY.at(t.sa_argmax[mm * c2() + c], c) += gP2.at(mm, c);
    Array gya = sa2().backward(s, t.sa2, activation_backward(t.sa2_act, gY));
    Array gX = sa().backward(s, t.sa, activation_backward(t.sa_act, gya));
    {
      std::size_t r = 0;
      for (std::size_t mm = 0; mm < t.m; ++mm)
        for (std::size_t j : f.groups[mm]) {
          const double* x = gX.row(r++);
          double* o = gP1e.row(j);
          for (std::size_t c = 0; c < c1(); ++c) o[c] += x[3 + c];
        }
    }

    // Stage 1.
    auto [gP1, gI1] = unfuse_stage(s, fuse1(), t.f1, t.f1_pt, t.f1_img, gP1e, gI1e);
    conv1().backward(s, t.c1, activation_backward(t.c1_act, gI1));
    Array ga1 = pt2().backward(s, t.p2, activation_backward(t.p2_act, gP1));
    pt1().backward(s, t.p1, activation_backward(t.p1_act, ga1));
  }

  std::vector<std::string> cross_modal_prefixes() const { return {"fuse1.", "fuse2.", "final."}; }

 private:
  static std::pair<Array, Array> fuse_stage(const ParamStore& s, const FusionBlock& b, const Array& P, const Array& I,
                                            const PixelCoords& coords, std::optional<FusionTape>& ft,
                                            std::optional<ActivationTape>& pt_act, std::optional<ActivationTape>& img_act) {
    if (b.mode == FusionMode::None) return {P, I};
    auto [out, tape] = b.forward(s, P, I, coords);
    ft = std::move(tape);
    Array pe = std::move(out.point), ie = std::move(out.image);
    if (b.uses_li()) {
      auto [y, at] = activation(Activation::Relu, pe);
      pe = std::move(y);
      pt_act = std::move(at);
    }
    if (b.uses_il()) {
      auto [y, at] = activation(Activation::Relu, ie);
      ie = std::move(y);
      img_act = std::move(at);
    }
    return {std::move(pe), std::move(ie)};
  }

  static std::pair<Array, Array> unfuse_stage(ParamStore& s, const FusionBlock& b, std::optional<FusionTape>& ft,
                                              std::optional<ActivationTape>& pt_act, std::optional<ActivationTape>& img_act,
                                              const Array& gP, const Array& gI) {
    if (b.mode == FusionMode::None) return {gP, gI};
    const Array gpe = b.uses_li() ? activation_backward(*pt_act, gP) : gP;
    const Array gie = b.uses_il() ? activation_backward(*img_act, gI) : gI;
    return b.backward(s, *ft, gie, gpe);
  }
};

}  // namespace epnet
