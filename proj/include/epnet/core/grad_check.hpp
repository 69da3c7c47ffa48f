// Central finite-difference gradient checking.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "epnet/core/array.hpp"

namespace epnet {

struct GradCheckReport {
  std::vector<double> numeric;
  std::vector<double> analytic;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares `analytic` against (f(x+eps) - f(x-eps)) / 2eps, coordinate by
// coordinate. If `coords` is non-empty only those coordinates are probed.
inline GradCheckReport grad_check(const std::function<double(const Array&)>& fn, const Array& point,
                                  const Array& analytic, double epsilon = 1e-5,
                                  double tolerance = 1e-4, const std::vector<std::size_t>& coords = {}) {
  point.require_same_shape(analytic, "grad_check");
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(point.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  GradCheckReport rep;
  Array x = point;
  for (std::size_t i : idx) {
    const double orig = x[i];
    x[i] = orig + epsilon;
    const double fp = fn(x);
    x[i] = orig - epsilon;
    const double fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("grad_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double num = (fp - fm) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], num);
    rep.numeric.push_back(num);
    rep.analytic.push_back(analytic[i]);
    rep.rel_error.push_back(err);
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace epnet
