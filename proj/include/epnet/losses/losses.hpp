// Training objectives. Each function returns its value together with the
// derivatives the caller needs to backpropagate.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "epnet/boxes3d/iou.hpp"

namespace epnet {

inline constexpr double kProbEps = 1e-7;

struct ScalarGrad {
  double value = 0.0;
  double grad = 0.0;  // d value / d input
};

namespace detail {

struct Clamped {
  double p;
  bool active;  // false when the clamp bit, i.e. derivative is zero
};

inline Clamped clamp_prob(double p) {
  if (p < kProbEps) return {kProbEps, false};
  if (p > 1.0 - kProbEps) return {1.0 - kProbEps, false};
  return {p, true};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Focal classification loss.

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
};

// Foreground: -a (1-p)^g log p. Background: -(1-a) p^g log(1-p).
inline ScalarGrad focal_loss(double pred, bool is_foreground, const FocalConfig& cfg = {}) {
  const auto [p, active] = detail::clamp_prob(pred);
  const double a = cfg.alpha, g = cfg.gamma;
  ScalarGrad r;
  if (is_foreground) {
    const double q = 1.0 - p;
    r.value = -a * std::pow(q, g) * std::log(p);
    r.grad = a * (g * std::pow(q, g - 1.0) * std::log(p) - std::pow(q, g) / p);
  } else {
    const double q = 1.0 - p;
    r.value = -(1.0 - a) * std::pow(p, g) * std::log(q);
    r.grad = -(1.0 - a) * (g * std::pow(p, g - 1.0) * std::log(q) - std::pow(p, g) / q);
  }
  if (!active) r.grad = 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// KL divergence between Bernoulli(p) and Bernoulli(q).

struct KlGrad {
  double value = 0.0;
  double dp = 0.0;
  double dq = 0.0;
};

inline KlGrad bernoulli_kl_grad(double p_in, double q_in) {
  const auto [p, pa] = detail::clamp_prob(p_in);
  const auto [q, qa] = detail::clamp_prob(q_in);
  KlGrad r;
  r.value = p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  r.dp = pa ? std::log(p / q) - std::log((1.0 - p) / (1.0 - q)) : 0.0;
  r.dq = qa ? -p / q + (1.0 - p) / (1.0 - q) : 0.0;
  return r;
}

inline double bernoulli_kl(double p, double q) { return bernoulli_kl_grad(p, q).value; }

// ---------------------------------------------------------------------------
// Multi-modal consistency loss.

struct ConfidencePair {
  double c_point = 0.0;  // geometric-stream confidence C_p
  double c_image = 0.0;  // image confidence sampled at the point's projection
  bool valid = true;
};

enum class McNormalization { AllPoints, ActivePoints };

struct McLossConfig {
  double tau = 0.2;
  double lambda1 = 0.5;  // weight of KL(C_i || C_a)
  double lambda2 = 0.5;  // weight of KL(C_p || C_a)
  bool stop_grad_average = false;
  McNormalization normalization = McNormalization::AllPoints;
};

struct McLossResult {
  double value = 0.0;
  std::vector<double> grad_point;  // dL/dC_p per pair
  std::vector<double> grad_image;  // dL/dC_i per pair
  std::size_t active = 0;
};

// L = 1/N sum_j I_j (l1 KL(C_i||C_a) + l2 KL(C_p||C_a)), C_a = (C_i + C_p)/2,
// I_j = [max(C_i, C_p) > tau]. Invalid pairs are skipped; N counts all pairs
// unless ActivePoints normalization is selected.
inline McLossResult mc_loss(std::span<const ConfidencePair> pairs, const McLossConfig& cfg = {}) {
  McLossResult r;
  r.grad_point.assign(pairs.size(), 0.0);
  r.grad_image.assign(pairs.size(), 0.0);
  if (pairs.empty()) return r;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const ConfidencePair& cp = pairs[j];
    if (!cp.valid || std::max(cp.c_point, cp.c_image) <= cfg.tau) continue;
    ++r.active;
  }
  const double n = cfg.normalization == McNormalization::AllPoints ? static_cast<double>(pairs.size())
                                                                    : static_cast<double>(std::max<std::size_t>(r.active, 1));
  const double avg_grad = cfg.stop_grad_average ? 0.0 : 0.5;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const ConfidencePair& cp = pairs[j];
    if (!cp.valid || std::max(cp.c_point, cp.c_image) <= cfg.tau) continue;
    const double ca = 0.5 * (cp.c_point + cp.c_image);
    const KlGrad ki = bernoulli_kl_grad(cp.c_image, ca);
    const KlGrad kp = bernoulli_kl_grad(cp.c_point, ca);
    r.value += (cfg.lambda1 * ki.value + cfg.lambda2 * kp.value) / n;
    // dC_a/dC_i = dC_a/dC_p = 1/2 unless the average is treated as constant.
    r.grad_image[j] = (cfg.lambda1 * (ki.dp + avg_grad * ki.dq) + cfg.lambda2 * avg_grad * kp.dq) / n;
    r.grad_point[j] = (cfg.lambda2 * (kp.dp + avg_grad * kp.dq) + cfg.lambda1 * avg_grad * ki.dq) / n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Consistency-enforcing loss: -log(C_c * IoU).

struct CeLossResult {
  double value = 0.0;
  double d_conf = 0.0;
  double d_iou = 0.0;
};

inline CeLossResult ce_loss(double conf, double iou) {
  CeLossResult r;
  const double c = std::clamp(conf, kProbEps, 1.0);
  const double o = std::clamp(iou, kProbEps, 1.0);
  r.value = -std::log(c * o);
  r.d_conf = (conf >= kProbEps && conf <= 1.0) ? -1.0 / c : 0.0;
  r.d_iou = (iou >= kProbEps && iou <= 1.0) ? -1.0 / o : 0.0;
  return r;
}

inline double ce_loss(double conf, const Box3D& pred, const Box3D& gt, bool use_3d = true) {
  return ce_loss(conf, use_3d ? iou_3d(pred, gt) : iou_bev(pred, gt)).value;
}

// ---------------------------------------------------------------------------

inline ScalarGrad smooth_l1(double diff, double beta = 1.0) {
  const double a = std::abs(diff);
  if (a < beta) return {0.5 * diff * diff / beta, diff / beta};
  return {a - 0.5 * beta, diff > 0 ? 1.0 : -1.0};
}

// Cross-entropy of softmax(logits) against class `target`; writes the logit
// gradient into `grad` (same length as logits).
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t target, std::span<double> grad) {
  if (target >= logits.size()) throw std::invalid_argument("softmax_cross_entropy: target out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) grad[k] = std::exp(logits[k] - lse) - (k == target ? 1.0 : 0.0);
  return lse - logits[target];
}

// ---------------------------------------------------------------------------

struct RpnLossParts {
  double cls = 0.0;
  double reg = 0.0;
  double ims = 0.0;
  double mc = 0.0;
  double ce = 0.0;
};

inline double rpn_total_loss(const RpnLossParts& p, double beta = 5.0) {
  return p.cls + p.reg + p.ims + p.mc + beta * p.ce;
}

}  // namespace epnet
