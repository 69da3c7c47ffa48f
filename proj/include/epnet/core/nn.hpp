// Differentiable primitives with explicit forward/backward.
//
// Every forward returns its output together with a tape holding the cached
// intermediates. A tape can be consumed by exactly one backward call.
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "epnet/core/array.hpp"

namespace epnet {

// Shared single-use guard for tapes.
class TapeGuard {
 public:
  void consume(const char* who) {
    if (!armed_) throw std::logic_error(std::string(who) + ": tape already consumed or empty");
    armed_ = false;
  }
  void arm() { armed_ = true; }
  bool armed() const { return armed_; }

 private:
  bool armed_ = false;
};

// ---------------------------------------------------------------------------
// linear: y = x W + b

struct LinearTape {
  Array x;
  TapeGuard guard;
};

struct LinearGrads {
  Array x;
  Array weight;
  std::optional<Array> bias;
};

inline Array linear_forward(const Array& weight, const Array* bias, const Array& x) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " vs weight " +
                                shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0), din = weight.dim(0), dout = weight.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != dout)) {
    throw std::invalid_argument("linear: bias " + shape_str(bias->shape()) + " vs out dim " +
                                std::to_string(dout));
  }
  Array y({n, dout});
  const double* w = weight.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = y.data() + i * dout;
    if (bias) std::copy_n(bias->data(), dout, yr);
    const double* xr = x.data() + i * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wr = w + k * dout;
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

inline std::pair<Array, LinearTape> linear(const Array& weight, const Array* bias, const Array& x) {
  Array y = linear_forward(weight, bias, x);
  LinearTape tape{x, {}};
  tape.guard.arm();
  return {std::move(y), std::move(tape)};
}

inline LinearGrads linear_backward(LinearTape& tape, const Array& weight, bool has_bias,
                                   const Array& upstream) {
  tape.guard.consume("linear_backward");
  const Array& x = tape.x;
  const std::size_t n = x.dim(0), din = weight.dim(0), dout = weight.dim(1);
  if (upstream.rank() != 2 || upstream.dim(0) != n || upstream.dim(1) != dout) {
    throw std::invalid_argument("linear_backward: upstream " + shape_str(upstream.shape()) +
                                ", expected [" + std::to_string(n) + "x" + std::to_string(dout) + "]");
  }
  LinearGrads g{Array({n, din}), Array({din, dout}), std::nullopt};
  if (has_bias) g.bias = Array({dout});
  const double* w = weight.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* gy = upstream.data() + i * dout;
    const double* xr = x.data() + i * din;
    double* gx = g.x.data() + i * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double* wr = w + k * dout;
      double* gw = g.weight.data() + k * dout;
      const double xv = xr[k];
      double acc = 0.0;
      for (std::size_t j = 0; j < dout; ++j) {
        acc += gy[j] * wr[j];
        gw[j] += xv * gy[j];
      }
      gx[k] = acc;
    }
    if (has_bias) {
      for (std::size_t j = 0; j < dout; ++j) (*g.bias)[j] += gy[j];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// conv2d_3x3 over H x W x C maps, zero "same" padding, stride 1 or 2.
// Kernel layout: [3][3][C_in][C_out].

struct ConvTape {
  Array input;
  int stride = 1;
  TapeGuard guard;
};

struct ConvGrads {
  Array input;
  Array kernel;
  std::optional<Array> bias;
};

inline std::size_t conv_out_extent(std::size_t n, int stride) {
  return (n + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

namespace detail {

inline void check_conv_args(const Array& kernel, const Array* bias, const Array& fmap, int stride) {
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("conv2d_3x3: unsupported stride " + std::to_string(stride));
  }
  if (fmap.rank() != 3 || fmap.dim(0) < 1 || fmap.dim(1) < 1) {
    throw std::invalid_argument("conv2d_3x3: input must be HxWxC with H,W >= 1, got " +
                                shape_str(fmap.shape()));
  }
  if (kernel.rank() != 4 || kernel.dim(0) != 3 || kernel.dim(1) != 3 || kernel.dim(2) != fmap.dim(2)) {
    throw std::invalid_argument("conv2d_3x3: kernel " + shape_str(kernel.shape()) + " vs input " +
                                shape_str(fmap.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != kernel.dim(3))) {
    throw std::invalid_argument("conv2d_3x3: bias " + shape_str(bias->shape()));
  }
}

}  // namespace detail

inline Array conv2d_3x3_forward(const Array& kernel, const Array* bias, const Array& fmap, int stride) {
  detail::check_conv_args(kernel, bias, fmap, stride);
  const long h = static_cast<long>(fmap.dim(0)), w = static_cast<long>(fmap.dim(1));
  const std::size_t cin = fmap.dim(2), cout = kernel.dim(3);
  const std::size_t ho = conv_out_extent(fmap.dim(0), stride), wo = conv_out_extent(fmap.dim(1), stride);
  Array out({ho, wo, cout});
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* o = out.data() + (oy * wo + ox) * cout;
      if (bias) std::copy_n(bias->data(), cout, o);
      for (long ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(oy) * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (long kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(ox) * stride + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const double* in = fmap.data() + (static_cast<std::size_t>(iy * w + ix)) * cin;
          const double* k = kernel.data() + static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          for (std::size_t c = 0; c < cin; ++c) {
            const double v = in[c];
            if (v == 0.0) continue;
            const double* kr = k + c * cout;
            for (std::size_t j = 0; j < cout; ++j) o[j] += v * kr[j];
          }
        }
      }
    }
  }
  return out;
}

inline std::pair<Array, ConvTape> conv2d_3x3(const Array& kernel, const Array* bias, const Array& fmap,
                                             int stride) {
  Array y = conv2d_3x3_forward(kernel, bias, fmap, stride);
  ConvTape tape{fmap, stride, {}};
  tape.guard.arm();
  return {std::move(y), std::move(tape)};
}

inline ConvGrads conv2d_3x3_backward(ConvTape& tape, const Array& kernel, bool has_bias,
                                     const Array& upstream) {
  tape.guard.consume("conv2d_3x3_backward");
  const Array& fmap = tape.input;
  const int stride = tape.stride;
  const long h = static_cast<long>(fmap.dim(0)), w = static_cast<long>(fmap.dim(1));
  const std::size_t cin = fmap.dim(2), cout = kernel.dim(3);
  const std::size_t ho = conv_out_extent(fmap.dim(0), stride), wo = conv_out_extent(fmap.dim(1), stride);
  if (upstream.shape() != Shape{ho, wo, cout}) {
    throw std::invalid_argument("conv2d_3x3_backward: upstream " + shape_str(upstream.shape()));
  }
  ConvGrads g{Array(fmap.shape()), Array(kernel.shape()), std::nullopt};
  if (has_bias) g.bias = Array({cout});
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const double* go = upstream.data() + (oy * wo + ox) * cout;
      if (has_bias) {
        for (std::size_t j = 0; j < cout; ++j) (*g.bias)[j] += go[j];
      }
      for (long ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(oy) * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (long kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(ox) * stride + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const std::size_t in_off = static_cast<std::size_t>(iy * w + ix) * cin;
          const double* in = fmap.data() + in_off;
          double* gin = g.input.data() + in_off;
          const std::size_t k_off = static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          const double* k = kernel.data() + k_off;
          double* gk = g.kernel.data() + k_off;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* kr = k + c * cout;
            double* gkr = gk + c * cout;
            const double v = in[c];
            double acc = 0.0;
            for (std::size_t j = 0; j < cout; ++j) {
              acc += go[j] * kr[j];
              gkr[j] += v * go[j];
            }
            gin[c] += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

enum class Activation { Tanh, Sigmoid, Relu };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ActivationTape {
  Activation kind = Activation::Relu;
  Array input;
  Array output;
  TapeGuard guard;
};

inline Array activation_forward(Activation kind, const Array& x) {
  Array y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!std::isfinite(v)) throw std::invalid_argument("activation: non-finite input");
    switch (kind) {
      case Activation::Tanh: y[i] = std::tanh(v); break;
      case Activation::Sigmoid: y[i] = sigmoid(v); break;
      case Activation::Relu: y[i] = v > 0.0 ? v : 0.0; break;
    }
  }
  return y;
}

inline std::pair<Array, ActivationTape> activation(Activation kind, const Array& x) {
  Array y = activation_forward(kind, x);
  ActivationTape tape{kind, x, y, {}};
  tape.guard.arm();
  return {std::move(y), std::move(tape)};
}

inline Array activation_backward(ActivationTape& tape, const Array& upstream) {
  tape.guard.consume("activation_backward");
  tape.output.require_same_shape(upstream, "activation_backward");
  Array g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = tape.output[i];
    switch (tape.kind) {
      case Activation::Tanh: g[i] = upstream[i] * (1.0 - y * y); break;
      case Activation::Sigmoid: g[i] = upstream[i] * y * (1.0 - y); break;
      case Activation::Relu: g[i] = tape.input[i] > 0.0 ? upstream[i] : 0.0; break;
    }
  }
  return g;
}

}  // namespace epnet
