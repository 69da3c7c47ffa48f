// Attention-gated cross-modal fusion layers.
//
//   gate(a, b)   w = sigmoid(W1 tanh(W2 a + W3 b))           one weight per point
//   LI-Fusion    F_ep = FC_out([F_p, w_i2p * sample(F_i)])   image -> point
//   IL-Fusion    F_ei = conv3x3([F_i, scatter(w_p2i * F_p)])  point -> image
//   CB-Fusion    IL first, then LI sampling from the enhanced map
//
// The P2I gate reuses the I2P form with its inputs swapped. All layers write
// their parameter gradients into the ParamStore during backward.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "epnet/core/nn.hpp"
#include "epnet/core/param_store.hpp"
#include "epnet/geometry/sampling.hpp"

namespace epnet {

enum class FusionMode { None, LiOnly, Cascade, Reversed, Parallel };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::None: return "none";
    case FusionMode::LiOnly: return "li_only";
    case FusionMode::Cascade: return "cascade";
    case FusionMode::Reversed: return "reversed";
    case FusionMode::Parallel: return "parallel";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::None;
  if (s == "li_only") return FusionMode::LiOnly;
  if (s == "cascade") return FusionMode::Cascade;
  if (s == "reversed") return FusionMode::Reversed;
  if (s == "parallel") return FusionMode::Parallel;
  throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

namespace detail {

// out[n] = sum_c a[n,c] * b[n,c]
inline Array row_dot(const Array& a, const Array& b) {
  Array out({a.dim(0), 1});
  const std::size_t d = a.dim(1);
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a[n * d + c] * b[n * d + c];
    out[n] = s;
  }
  return out;
}

// out[n,c] = w[n] * x[n,c]
inline Array row_scale(const Array& w, const Array& x) {
  Array out(x.shape());
  const std::size_t d = x.rank() == 2 ? x.dim(1) : 0;
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < d; ++c) out[n * d + c] = w[n] * x[n * d + c];
  return out;
}

inline void require_rows(const Array& a, const Array& b, const char* who) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument(std::string(who) + ": row mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct GateTape {
  LinearTape a, b, out;
  ActivationTape tanh, sigmoid;
};

// w = sigmoid(W1 tanh(W2 a + W3 b)); parameters "<name>.a", "<name>.b", "<name>.w1".
struct AttentionGate {
  std::string name;
  std::size_t da = 0, db = 0, hidden = 0;

  Dense fa() const { return {name + ".a", da, hidden, true}; }
  Dense fb() const { return {name + ".b", db, hidden, true}; }
  Dense fw() const { return {name + ".w1", hidden, 1, true}; }

  void init(ParamStore& s, Rng& rng) const {
    fa().init(s, rng);
    fb().init(s, rng);
    fw().init(s, rng);
  }

  std::pair<Array, GateTape> forward(const ParamStore& s, const Array& a, const Array& b) const {
    detail::require_rows(a, b, "attention_gate");
    auto [ya, ta] = fa().forward(s, a);
    auto [yb, tb] = fb().forward(s, b);
    ya += yb;
    auto [t, tt] = activation(Activation::Tanh, ya);
    auto [logit, to] = fw().forward(s, t);
    auto [w, ts] = activation(Activation::Sigmoid, logit);
    return {std::move(w), GateTape{std::move(ta), std::move(tb), std::move(to), std::move(tt), std::move(ts)}};
  }

  // Returns gradients w.r.t. (a, b).
  std::pair<Array, Array> backward(ParamStore& s, GateTape& tape, const Array& gw) const {
    Array glogit = activation_backward(tape.sigmoid, gw);
    Array gt = fw().backward(s, tape.out, glogit);
    Array gpre = activation_backward(tape.tanh, gt);
    Array ga = fa().backward(s, tape.a, gpre);
    Array gb = fb().backward(s, tape.b, gpre);
    return {std::move(ga), std::move(gb)};
  }
};

// ---------------------------------------------------------------------------

struct LiTape {
  std::optional<GateTape> gate;
  Array w;
  Array fi_pt;
  LinearTape out;
};

// Image-to-point fusion. When `gated` is false the gate is absent and w == 1.
struct LiFusion {
  std::string name;
  std::size_t dp = 0, di = 0, hidden = 0;
  bool gated = true;

  AttentionGate gate() const { return {name + ".i2p", dp, di, hidden}; }
  Dense fc_out() const { return {name + ".out", dp + di, dp, true}; }

  void init(ParamStore& s, Rng& rng) const {
    if (gated) gate().init(s, rng);
    fc_out().init(s, rng);
  }

  std::pair<Array, LiTape> forward(const ParamStore& s, const Array& fp, const Array& fi_pt) const {
    detail::require_rows(fp, fi_pt, "li_fusion");
    if (fp.dim(1) != dp || fi_pt.dim(1) != di) {
      throw std::invalid_argument("li_fusion: expected " + std::to_string(dp) + "/" + std::to_string(di) +
                                  " channels, got " + shape_str(fp.shape()) + " / " + shape_str(fi_pt.shape()));
    }
    LiTape tape;
    if (gated) {
      auto [w, gt] = gate().forward(s, fp, fi_pt);
      tape.w = std::move(w);
      tape.gate = std::move(gt);
    } else {
      tape.w = Array({fp.dim(0), 1}, 1.0);
    }
    Array cat = concat_cols(fp, detail::row_scale(tape.w, fi_pt));
    auto [y, to] = fc_out().forward(s, cat);
    tape.fi_pt = fi_pt;
    tape.out = std::move(to);
    return {std::move(y), std::move(tape)};
  }

  // Returns gradients w.r.t. (F_p, sampled image features).
  std::pair<Array, Array> backward(ParamStore& s, LiTape& tape, const Array& gy) const {
    Array gcat = fc_out().backward(s, tape.out, gy);
    auto [gfp, gwf] = split_cols(gcat, dp);
    Array gfi = detail::row_scale(tape.w, gwf);
    if (gated) {
      Array gw = detail::row_dot(gwf, tape.fi_pt);
      auto [gfp_gate, gfi_gate] = gate().backward(s, *tape.gate, gw);
      gfp += gfp_gate;
      gfi += gfi_gate;
    }
    return {std::move(gfp), std::move(gfi)};
  }
};

// ---------------------------------------------------------------------------

struct IlTape {
  std::optional<GateTape> gate;
  std::optional<SampleTape> sample;
  Array w;
  Array fp;
  SampleTape scatter;
  ConvTape conv;
  std::size_t height = 0, width = 0;
};

// Point-to-image fusion. The P2I gate takes (sampled image, point) features.
struct IlFusion {
  std::string name;
  std::size_t dp = 0, di = 0, hidden = 0;
  bool gated = true;

  AttentionGate gate() const { return {name + ".p2i", di, dp, hidden}; }
  Conv3x3 conv() const { return {name + ".conv", di + dp, di, 1}; }

  void init(ParamStore& s, Rng& rng) const {
    if (gated) gate().init(s, rng);
    conv().init(s, rng);
  }

  std::pair<Array, IlTape> forward(const ParamStore& s, const Array& fp, const Array& fi,
                                   const PixelCoords& coords) const {
    if (fi.rank() != 3 || fi.dim(2) != di) {
      throw std::invalid_argument("il_fusion: image map " + shape_str(fi.shape()) + ", expected D=" + std::to_string(di));
    }
    if (fp.rank() != 2 || fp.dim(1) != dp || fp.dim(0) != coords.size()) {
      throw std::invalid_argument("il_fusion: point features " + shape_str(fp.shape()) + " vs " +
                                  std::to_string(coords.size()) + " coordinates");
    }
    IlTape tape;
    tape.height = fi.dim(0);
    tape.width = fi.dim(1);
    if (gated) {
      auto [fi_pt, st] = bilinear_sample(fi, coords);
      auto [w, gt] = gate().forward(s, fi_pt, fp);
      tape.w = std::move(w);
      tape.gate = std::move(gt);
      tape.sample = std::move(st);
    } else {
      tape.w = Array({fp.dim(0), 1}, 1.0);
    }
    Array fap = detail::row_scale(tape.w, fp);
    auto [grid, sct] = grid_scatter(fap, coords, tape.height, tape.width);
    auto [y, ct] = conv().forward(s, concat_channels(fi, grid));
    tape.fp = fp;
    tape.scatter = std::move(sct);
    tape.conv = std::move(ct);
    return {std::move(y), std::move(tape)};
  }

  // Returns gradients w.r.t. (F_p, F_i).
  std::pair<Array, Array> backward(ParamStore& s, IlTape& tape, const Array& gy) const {
    Array gcat = conv().backward(s, tape.conv, gy);
    auto [gfi, ggrid] = split_channels(gcat, di);
    Array gfap = grid_scatter_backward(tape.scatter, ggrid);
    Array gfp = detail::row_scale(tape.w, gfap);
    if (gated) {
      Array gw = detail::row_dot(gfap, tape.fp);
      auto [gfi_pt, gfp_gate] = gate().backward(s, *tape.gate, gw);
      gfp += gfp_gate;
      gfi += bilinear_sample_backward(*tape.sample, gfi_pt);
    }
    return {std::move(gfp), std::move(gfi)};
  }
};

// ---------------------------------------------------------------------------

struct FusionOutput {
  Array image;  // F_ei, H x W x D_i
  Array point;  // F_ep, N x D_p
};

struct FusionTape {
  std::optional<IlTape> il;
  std::optional<LiTape> li;
  std::optional<SampleTape> sample;
};

// One fusion insertion point. `mode` selects which pathways run and whether
// the second attention step consumes enhanced or original features.
struct FusionBlock {
  std::string name;
  std::size_t dp = 0, di = 0, hidden = 0;
  FusionMode mode = FusionMode::Cascade;
  bool gated = true;

  LiFusion li() const { return {name + ".li", dp, di, hidden, gated}; }
  IlFusion il() const { return {name + ".il", dp, di, hidden, gated}; }

  bool uses_li() const { return mode != FusionMode::None; }
  bool uses_il() const { return mode == FusionMode::Cascade || mode == FusionMode::Reversed || mode == FusionMode::Parallel; }

  void init(ParamStore& s, Rng& rng) const {
    if (uses_il()) il().init(s, rng);
    if (uses_li()) li().init(s, rng);
  }

  std::pair<FusionOutput, FusionTape> forward(const ParamStore& s, const Array& fp, const Array& fi,
                                              const PixelCoords& coords) const {
    FusionTape tape;
    FusionOutput out{fi, fp};
    switch (mode) {
      case FusionMode::None: break;
      case FusionMode::LiOnly: {
        auto [pt, st] = bilinear_sample(fi, coords);
        auto [ep, lt] = li().forward(s, fp, pt);
        out.point = std::move(ep);
        tape.sample = std::move(st);
        tape.li = std::move(lt);
        break;
      }
      case FusionMode::Cascade: {
        auto [ei, it] = il().forward(s, fp, fi, coords);
        auto [pt, st] = bilinear_sample(ei, coords);
        auto [ep, lt] = li().forward(s, fp, pt);
        out = {std::move(ei), std::move(ep)};
        tape.il = std::move(it);
        tape.sample = std::move(st);
        tape.li = std::move(lt);
        break;
      }
      case FusionMode::Reversed: {
        auto [pt, st] = bilinear_sample(fi, coords);
        auto [ep, lt] = li().forward(s, fp, pt);
        auto [ei, it] = il().forward(s, ep, fi, coords);
        out = {std::move(ei), std::move(ep)};
        tape.il = std::move(it);
        tape.sample = std::move(st);
        tape.li = std::move(lt);
        break;
      }
      case FusionMode::Parallel: {
        auto [ei, it] = il().forward(s, fp, fi, coords);
        auto [pt, st] = bilinear_sample(fi, coords);
        auto [ep, lt] = li().forward(s, fp, pt);
        out = {std::move(ei), std::move(ep)};
        tape.il = std::move(it);
        tape.sample = std::move(st);
        tape.li = std::move(lt);
        break;
      }
    }
    return {std::move(out), std::move(tape)};
  }

  // Upstream gradients for (F_ei, F_ep); returns gradients for (F_p, F_i).
  std::pair<Array, Array> backward(ParamStore& s, FusionTape& tape, const Array& g_image, const Array& g_point) const {
    switch (mode) {
      case FusionMode::None: return {g_point, g_image};
      case FusionMode::LiOnly: {
        auto [gfp, gpt] = li().backward(s, *tape.li, g_point);
        Array gfi = g_image;
        gfi += bilinear_sample_backward(*tape.sample, gpt);
        return {std::move(gfp), std::move(gfi)};
      }
      case FusionMode::Cascade: {
        auto [gfp, gpt] = li().backward(s, *tape.li, g_point);
        Array gei = g_image;
        gei += bilinear_sample_backward(*tape.sample, gpt);
        auto [gfp2, gfi] = il().backward(s, *tape.il, gei);
        gfp += gfp2;
        return {std::move(gfp), std::move(gfi)};
      }
      case FusionMode::Reversed: {
        auto [gep, gfi] = il().backward(s, *tape.il, g_image);
        gep += g_point;
        auto [gfp, gpt] = li().backward(s, *tape.li, gep);
        gfi += bilinear_sample_backward(*tape.sample, gpt);
        return {std::move(gfp), std::move(gfi)};
      }
      case FusionMode::Parallel: {
        auto [gfp, gfi] = il().backward(s, *tape.il, g_image);
        auto [gfp2, gpt] = li().backward(s, *tape.li, g_point);
        gfp += gfp2;
        gfi += bilinear_sample_backward(*tape.sample, gpt);
        return {std::move(gfp), std::move(gfi)};
      }
    }
    throw std::logic_error("FusionBlock: unreachable");
  }
};

}  // namespace epnet
