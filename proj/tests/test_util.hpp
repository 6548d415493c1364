#pragma once

#include <cmath>
#include <vector>

#include "dhbe/layers.hpp"

namespace dhbe::testutil {

// Scalar probe loss L(y) = sum(y * r) for a fixed random r, so dL/dy = r.
struct ProbeLoss {
  Tensor r;
  explicit ProbeLoss(const std::vector<int>& shape, RngStream& rng) : r(shape) {
    rng.fill_normal(r);
  }
  double value(const Tensor& y) const {
    double s = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
    return s;
  }
};

// Central-difference check of parameter and input gradients for a single
// layer. Returns the fraction of coordinates whose relative error exceeds
// tol; spot-checks a bounded number of coordinates to stay fast.
struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  double worst = 0.0;
};

inline GradCheckResult check_layer_gradients(Layer& layer, const Tensor& x0, Mode mode,
                                             RngStream& rng, float eps = 1e-2f,
                                             double tol = 4e-2, int max_coords = 64) {
  Tensor y0 = layer.forward(x0, mode);
  ProbeLoss probe(y0.shape(), rng);
  Tensor gx = layer.backward(probe.r);

  std::vector<Parameter*> params;
  layer.collect_params(params);

  GradCheckResult res;
  auto eval = [&]() {
    NoGradGuard ng;
    return probe.value(layer.forward(x0, mode));
  };
  auto check_coord = [&](float* value, float analytic) {
    const float old = *value;
    *value = old + eps;
    const double lp = eval();
    *value = old - eps;
    const double lm = eval();
    *value = old;
    const double numeric = (lp - lm) / (2.0 * static_cast<double>(eps));
    const double denom = std::fabs(numeric) + std::fabs(static_cast<double>(analytic)) + 1e-3;
    const double rel = std::fabs(numeric - static_cast<double>(analytic)) / denom;
    res.worst = std::max(res.worst, rel);
    ++res.checked;
    if (rel > tol) ++res.failed;
  };

  for (Parameter* p : params) {
    const int64_t n = p->value.size();
    const int64_t stride = std::max<int64_t>(1, n / max_coords);
    for (int64_t j = 0; j < n; j += stride) check_coord(&p->value[j], p->grad[j]);
  }
  {
    Tensor x = x0;
    const int64_t n = x.size();
    const int64_t stride = std::max<int64_t>(1, n / max_coords);
    for (int64_t j = 0; j < n; j += stride) {
      const float old = x[j];
      x[j] = old + eps;
      double lp;
      {
        NoGradGuard ng;
        lp = probe.value(layer.forward(x, mode));
      }
      x[j] = old - eps;
      double lm;
      {
        NoGradGuard ng;
        lm = probe.value(layer.forward(x, mode));
      }
      x[j] = old;
      const double numeric = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double denom = std::fabs(numeric) + std::fabs(static_cast<double>(gx[j])) + 1e-3;
      const double rel = std::fabs(numeric - static_cast<double>(gx[j])) / denom;
      res.worst = std::max(res.worst, rel);
      ++res.checked;
      if (rel > tol) ++res.failed;
    }
  }
  return res;
}

}  // namespace dhbe::testutil
