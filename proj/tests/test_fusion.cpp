#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "epnet/core/grad_check.hpp"
#include "epnet/fusion/fusion.hpp"

using namespace epnet;

namespace {

Array random_array(Shape s, Rng& rng, double scale = 1.0) {
  Array a(std::move(s));
  for (double& v : a.raw()) v = rng.uniform(-scale, scale);
  return a;
}

PixelCoords random_coords(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  PixelCoords c;
  for (std::size_t i = 0; i < n; ++i) {
    c.uv.push_back({rng.uniform(0.0, static_cast<double>(w - 1)), rng.uniform(0.0, static_cast<double>(h - 1))});
    c.valid.push_back(i % 5 == 4 ? 0 : 1);
  }
  return c;
}

// Finite differences over every scalar of every parameter in `s`, comparing to
// the gradients accumulated by `backward`. `loss` must only read `s`.
double param_grad_error(ParamStore& s, const std::function<double(const ParamStore&)>& loss,
                        const std::function<void(ParamStore&)>& backward) {
  s.zero_grad();
  backward(s);
  double worst = 0.0;
  for (const std::string& name : s.names()) {
    const Array analytic = s.grad(name);
    const Array point = s.value(name);
    auto f = [&](const Array& v) {
      Array keep = s.value(name);
      s.value(name) = v;
      const double r = loss(s);
      s.value(name) = keep;
      return r;
    };
    worst = std::max(worst, grad_check(f, point, analytic).max_rel_error);
  }
  return worst;
}

void close_gate(ParamStore& s, const std::string& gate) {
  s.value(gate + ".w1.w").fill(0.0);
  s.value(gate + ".w1.b").fill(-800.0);
}

struct Inputs {
  Array fp, fi;
  PixelCoords coords;
};

Inputs make_inputs(std::uint64_t seed, std::size_t n = 7, std::size_t h = 4, std::size_t w = 5, std::size_t dp = 3,
                   std::size_t di = 2) {
  Rng rng(seed);
  return {random_array({n, dp}, rng), random_array({h, w, di}, rng), random_coords(n, h, w, rng)};
}

}  // namespace

TEST(AttentionGate, ZeroInputsGiveHalf) {
  Rng rng(1);
  AttentionGate g{"g", 3, 2, 4};
  ParamStore s;
  g.init(s, rng);
  auto [w, tape] = g.forward(s, Array({5, 3}), Array({5, 2}));
  for (double v : w.raw()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(AttentionGate, ZeroW1GivesHalfForAnyFeatures) {
  Rng rng(2);
  AttentionGate g{"g", 3, 2, 4};
  ParamStore s;
  g.init(s, rng);
  s.value("g.w1.w").fill(0.0);
  auto [w, tape] = g.forward(s, random_array({5, 3}, rng), random_array({5, 2}, rng));
  for (double v : w.raw()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(AttentionGate, MatchesScalarComposition) {
  Rng rng(3);
  AttentionGate g{"g", 2, 2, 2};
  ParamStore s;
  g.init(s, rng);
  for (const char* b : {"g.a.b", "g.b.b", "g.w1.b"})
    for (double& v : s.value(b).raw()) v = rng.uniform(-0.5, 0.5);
  Array a = random_array({3, 2}, rng), b = random_array({3, 2}, rng);
  auto [w, tape] = g.forward(s, a, b);
  const Array &W2 = s.value("g.a.w"), &b2 = s.value("g.a.b"), &W3 = s.value("g.b.w"), &b3 = s.value("g.b.b");
  const Array &W1 = s.value("g.w1.w"), &b1 = s.value("g.w1.b");
  for (std::size_t n = 0; n < 3; ++n) {
    double logit = b1[0];
    for (std::size_t h = 0; h < 2; ++h) {
      double pre = b2[h] + b3[h];
      for (std::size_t k = 0; k < 2; ++k) pre += a.at(n, k) * W2.at(k, h) + b.at(n, k) * W3.at(k, h);
      logit += std::tanh(pre) * W1.at(h, 0);
    }
    EXPECT_NEAR(w[n], 1.0 / (1.0 + std::exp(-logit)), 1e-15);
    EXPECT_GT(w[n], 0.0);
    EXPECT_LT(w[n], 1.0);
  }
}

TEST(AttentionGate, RowMismatchRejected) {
  Rng rng(4);
  AttentionGate g{"g", 3, 2, 4};
  ParamStore s;
  g.init(s, rng);
  EXPECT_THROW(g.forward(s, Array({5, 3}), Array({4, 2})), std::invalid_argument);
}

TEST(AttentionGate, GradientTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    AttentionGate g{"g", 3, 2, 4};
    ParamStore s;
    g.init(s, rng);
    Array a = random_array({6, 3}, rng), b = random_array({6, 2}, rng), up = random_array({6, 1}, rng);
    auto loss = [&](const ParamStore& st) { return dot(g.forward(st, a, b).first, up); };
    EXPECT_LT(param_grad_error(s, loss, [&](ParamStore& st) {
      auto [w, t] = g.forward(st, a, b);
      g.backward(st, t, up);
    }), 1e-4) << seed;
    auto [w, t] = g.forward(s, a, b);
    auto [ga, gb] = g.backward(s, t, up);
    EXPECT_TRUE(grad_check([&](const Array& x) { return dot(g.forward(s, x, b).first, up); }, a, ga).passed);
    EXPECT_TRUE(grad_check([&](const Array& x) { return dot(g.forward(s, a, x).first, up); }, b, gb).passed);
  }
}

TEST(LiFusion, ClosedGateSuppressesImage) {
  Rng rng(5);
  LiFusion li{"li", 3, 2, 2, true};
  ParamStore s;
  li.init(s, rng);
  close_gate(s, "li.i2p");
  Array fp = random_array({4, 3}, rng);
  Array y1 = li.forward(s, fp, random_array({4, 2}, rng)).first;
  Array y2 = li.forward(s, fp, random_array({4, 2}, rng, 10.0)).first;
  EXPECT_LT(max_abs_diff(y1, y2), 1e-12);
  Array ref = Dense{"li.out", 5, 3, true}.forward(s, concat_cols(fp, Array({4, 2}))).first;
  EXPECT_LT(max_abs_diff(y1, ref), 1e-12);
}

TEST(LiFusion, EmptyPointSet) {
  Rng rng(6);
  LiFusion li{"li", 3, 2, 2, true};
  ParamStore s;
  li.init(s, rng);
  auto [y, t] = li.forward(s, Array({0, 3}), Array({0, 2}));
  EXPECT_EQ(y.shape(), (Shape{0, 3}));
}

TEST(LiFusion, ChannelMismatchRejected) {
  Rng rng(7);
  LiFusion li{"li", 3, 2, 2, true};
  ParamStore s;
  li.init(s, rng);
  EXPECT_THROW(li.forward(s, Array({4, 2}), Array({4, 2})), std::invalid_argument);
  EXPECT_THROW(li.forward(s, Array({4, 3}), Array({3, 2})), std::invalid_argument);
}

TEST(LiFusion, GradientTenSeeds) {
  for (bool gated : {true, false}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(100 + seed);
      LiFusion li{"li", 3, 2, 2, gated};
      ParamStore s;
      li.init(s, rng);
      Array fp = random_array({5, 3}, rng), fi = random_array({5, 2}, rng), up = random_array({5, 3}, rng);
      auto loss = [&](const ParamStore& st) { return dot(li.forward(st, fp, fi).first, up); };
      EXPECT_LT(param_grad_error(s, loss, [&](ParamStore& st) {
        auto [y, t] = li.forward(st, fp, fi);
        li.backward(st, t, up);
      }), 1e-4);
      auto [y, t] = li.forward(s, fp, fi);
      auto [gfp, gfi] = li.backward(s, t, up);
      EXPECT_TRUE(grad_check([&](const Array& x) { return dot(li.forward(s, x, fi).first, up); }, fp, gfp).passed);
      EXPECT_TRUE(grad_check([&](const Array& x) { return dot(li.forward(s, fp, x).first, up); }, fi, gfi).passed);
    }
  }
}

TEST(IlFusion, ZeroPointsOrNoValidCoordsReduceToPlainConv) {
  Rng rng(8);
  IlFusion il{"il", 3, 2, 2, true};
  ParamStore s;
  il.init(s, rng);
  Inputs in = make_inputs(8);
  const Array ref = Conv3x3{"il.conv", 5, 2, 1}.forward(s, concat_channels(in.fi, Array({4, 5, 3}))).first;
  EXPECT_LT(max_abs_diff(il.forward(s, Array({7, 3}), in.fi, in.coords).first, ref), 1e-15);
  PixelCoords none = in.coords;
  std::fill(none.valid.begin(), none.valid.end(), 0);
  EXPECT_LT(max_abs_diff(il.forward(s, in.fp, in.fi, none).first, ref), 1e-15);
}

TEST(IlFusion, ShapeErrors) {
  Rng rng(9);
  IlFusion il{"il", 3, 2, 2, true};
  ParamStore s;
  il.init(s, rng);
  Inputs in = make_inputs(9);
  EXPECT_THROW(il.forward(s, Array({6, 3}), in.fi, in.coords), std::invalid_argument);
  EXPECT_THROW(il.forward(s, in.fp, Array({4, 5, 3}), in.coords), std::invalid_argument);
}

TEST(IlFusion, GradientTenSeeds) {
  for (bool gated : {true, false}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      IlFusion il{"il", 3, 2, 2, gated};
      ParamStore s;
      Rng rng(200 + seed);
      il.init(s, rng);
      Inputs in = make_inputs(300 + seed);
      Array up = random_array({4, 5, 2}, rng);
      auto loss = [&](const ParamStore& st) { return dot(il.forward(st, in.fp, in.fi, in.coords).first, up); };
      EXPECT_LT(param_grad_error(s, loss, [&](ParamStore& st) {
        auto [y, t] = il.forward(st, in.fp, in.fi, in.coords);
        il.backward(st, t, up);
      }), 1e-4);
      auto [y, t] = il.forward(s, in.fp, in.fi, in.coords);
      auto [gfp, gfi] = il.backward(s, t, up);
      EXPECT_TRUE(grad_check([&](const Array& x) { return dot(il.forward(s, x, in.fi, in.coords).first, up); }, in.fp, gfp).passed);
      EXPECT_TRUE(grad_check([&](const Array& x) { return dot(il.forward(s, in.fp, x, in.coords).first, up); }, in.fi, gfi).passed);
    }
  }
}

TEST(FusionBlock, ModeParsing) {
  for (FusionMode m : {FusionMode::None, FusionMode::LiOnly, FusionMode::Cascade, FusionMode::Reversed, FusionMode::Parallel})
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  EXPECT_THROW(parse_fusion_mode("sideways"), std::invalid_argument);
}

TEST(FusionBlock, ZeroInputTraceThroughHalfGates) {
  Rng rng(10);
  FusionBlock cb{"cb", 3, 2, 2, FusionMode::Cascade, true};
  ParamStore s;
  cb.init(s, rng);
  Inputs in = make_inputs(10);
  const Array fp({7, 3}), fi({4, 5, 2});
  auto [out, tape] = cb.forward(s, fp, fi, in.coords);
  // Every bias is zero, so each stage maps zeros to zeros.
  for (double v : out.image.raw()) EXPECT_EQ(v, 0.0);
  for (double v : out.point.raw()) EXPECT_EQ(v, 0.0);
  for (double& v : s.value("cb.li.out.b").raw()) v = 0.25;
  for (double& v : s.value("cb.il.conv.b").raw()) v = -0.5;
  auto [out2, tape2] = cb.forward(s, fp, fi, in.coords);
  // F_ei is the conv bias everywhere; F_ep = FC_out([0, w * sample(F_ei)]) + b with
  // w = sigmoid(W1 tanh(W3 sample)) since F_p = 0 and gate biases are zero.
  for (double v : out2.image.raw()) EXPECT_EQ(v, -0.5);
  const Array& W = s.value("cb.li.out.w");
  const Array &W3 = s.value("cb.li.i2p.b.w"), &W1 = s.value("cb.li.i2p.w1.w");
  double logit = 0.0;
  for (std::size_t h = 0; h < 2; ++h) logit += W1.at(h, 0) * std::tanh(-0.5 * (W3.at(0, h) + W3.at(1, h)));
  const double w_open = 1.0 / (1.0 + std::exp(-logit));
  for (std::size_t n = 0; n < 7; ++n)
    for (std::size_t j = 0; j < 3; ++j) {
      const double sampled = in.coords.valid[n] ? -0.5 : 0.0;
      const double w = in.coords.valid[n] ? w_open : 0.5;
      const double ref = 0.25 + w * sampled * (W.at(3, j) + W.at(4, j));
      EXPECT_NEAR(out2.point.at(n, j), ref, 1e-15);
    }
}

TEST(FusionBlock, ClosedGatesDecoupleAllModes) {
  Inputs in = make_inputs(11);
  std::vector<FusionOutput> outs;
  for (FusionMode m : {FusionMode::Cascade, FusionMode::Reversed, FusionMode::Parallel}) {
    Rng rng(11);
    FusionBlock fb{"fb", 3, 2, 2, m, true};
    ParamStore s;
    fb.init(s, rng);
    close_gate(s, "fb.li.i2p");
    close_gate(s, "fb.il.p2i");
    auto [out, tape] = fb.forward(s, in.fp, in.fi, in.coords);
    const Array ref_i = Conv3x3{"fb.il.conv", 5, 2, 1}.forward(s, concat_channels(in.fi, Array({4, 5, 3}))).first;
    const Array ref_p = Dense{"fb.li.out", 5, 3, true}.forward(s, concat_cols(in.fp, Array({7, 2}))).first;
    EXPECT_LT(max_abs_diff(out.image, ref_i), 1e-12);
    EXPECT_LT(max_abs_diff(out.point, ref_p), 1e-12);
    outs.push_back(out);
  }
  EXPECT_LT(max_abs_diff(outs[0].point, outs[1].point), 1e-12);
  EXPECT_LT(max_abs_diff(outs[0].image, outs[2].image), 1e-12);
}

TEST(FusionBlock, CascadeAndParallelDifferWithOpenGates) {
  Inputs in = make_inputs(12);
  Rng r1(12), r2(12);
  FusionBlock c{"fb", 3, 2, 2, FusionMode::Cascade, true}, p{"fb", 3, 2, 2, FusionMode::Parallel, true};
  ParamStore sc, sp;
  c.init(sc, r1);
  p.init(sp, r2);
  const auto oc = c.forward(sc, in.fp, in.fi, in.coords).first;
  const auto op = p.forward(sp, in.fp, in.fi, in.coords).first;
  EXPECT_LT(max_abs_diff(oc.image, op.image), 1e-15);
  EXPECT_GT(max_abs_diff(oc.point, op.point), 1e-6);
}

TEST(FusionBlock, OutputChannelsAndParameterSets) {
  Inputs in = make_inputs(13);
  for (FusionMode m : {FusionMode::None, FusionMode::LiOnly, FusionMode::Cascade, FusionMode::Reversed, FusionMode::Parallel}) {
    Rng rng(13);
    FusionBlock fb{"fb", 3, 2, 2, m, true};
    ParamStore s;
    fb.init(s, rng);
    auto [out, tape] = fb.forward(s, in.fp, in.fi, in.coords);
    EXPECT_EQ(out.point.shape(), (Shape{7, 3}));
    EXPECT_EQ(out.image.shape(), (Shape{4, 5, 2}));
    EXPECT_EQ(s.contains("fb.il.conv.k"), fb.uses_il());
    EXPECT_EQ(s.contains("fb.li.out.w"), fb.uses_li());
  }
  Rng rng(13);
  FusionBlock ungated{"fb", 3, 2, 2, FusionMode::Cascade, false};
  ParamStore s;
  ungated.init(s, rng);
  for (const auto& n : s.names()) EXPECT_EQ(n.find("2p"), std::string::npos) << n;
  EXPECT_EQ(s.names().size(), 4u);
}

TEST(FusionBlock, GradientEveryModeTenSeeds) {
  for (FusionMode m : {FusionMode::LiOnly, FusionMode::Cascade, FusionMode::Reversed, FusionMode::Parallel}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FusionBlock fb{"fb", 3, 2, 2, m, seed % 2 == 0};
      ParamStore s;
      Rng rng(400 + seed);
      fb.init(s, rng);
      Inputs in = make_inputs(500 + seed);
      Array ui = random_array({4, 5, 2}, rng), upt = random_array({7, 3}, rng);
      auto value = [&](const ParamStore& st, const Array& fp, const Array& fi) {
        auto o = fb.forward(st, fp, fi, in.coords).first;
        return dot(o.image, ui) + dot(o.point, upt);
      };
      EXPECT_LT(param_grad_error(s, [&](const ParamStore& st) { return value(st, in.fp, in.fi); },
                                 [&](ParamStore& st) {
                                   auto [o, t] = fb.forward(st, in.fp, in.fi, in.coords);
                                   fb.backward(st, t, ui, upt);
                                 }),
                1e-4)
          << to_string(m) << " " << seed;
      auto [o, t] = fb.forward(s, in.fp, in.fi, in.coords);
      auto [gfp, gfi] = fb.backward(s, t, ui, upt);
      EXPECT_TRUE(grad_check([&](const Array& x) { return value(s, x, in.fi); }, in.fp, gfp).passed) << to_string(m);
      EXPECT_TRUE(grad_check([&](const Array& x) { return value(s, in.fp, x); }, in.fi, gfi).passed) << to_string(m);
    }
  }
}

TEST(FusionBlock, NoneModePassesThrough) {
  Inputs in = make_inputs(14);
  FusionBlock fb{"fb", 3, 2, 2, FusionMode::None, true};
  ParamStore s;
  auto [o, t] = fb.forward(s, in.fp, in.fi, in.coords);
  EXPECT_EQ(o.point.raw(), in.fp.raw());
  EXPECT_EQ(o.image.raw(), in.fi.raw());
  EXPECT_EQ(s.size(), 0u);
}

TEST(FusionBlock, PermutationEquivariance) {
  Inputs in = make_inputs(15);
  Rng rng(15);
  FusionBlock fb{"fb", 3, 2, 2, FusionMode::Cascade, true};
  ParamStore s;
  fb.init(s, rng);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Array fp2({7, 3});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t c = 0; c < 3; ++c) fp2.at(i, c) = in.fp.at(perm[i], c);
  const auto a = fb.forward(s, in.fp, in.fi, in.coords).first;
  const auto b = fb.forward(s, fp2, in.fi, in.coords.subset(perm)).first;
  EXPECT_LT(max_abs_diff(a.image, b.image), 1e-10);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b.point.at(i, c), a.point.at(perm[i], c), 1e-10);
}
