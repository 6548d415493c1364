#include "dhbe/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dhbe/errors.hpp"

namespace dhbe {

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad) {
  const int b = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) throw ContractError("labels batch mismatch");
  if (grad && !grad->same_shape(logits)) *grad = Tensor::uninit(logits.shape());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= n) throw ContractError("label out of range");
    loss += std::log(sum) - (static_cast<double>(row[y]) - mx);
    if (grad) {
      float* g = grad->data() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
        g[j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / b);
      }
    }
  }
  return loss / b;
}

double mean_l1_distance(const Tensor& a, const Tensor& b, Tensor* grad_a, Tensor* grad_b) {
  if (!a.same_shape(b)) throw ContractError("l1 distance shape mismatch");
  if (a.ndim() < 1 || a.dim(0) == 0) throw ContractError("l1 distance on empty batch");
  const int batch = a.dim(0);
  const float inv_b = 1.0f / static_cast<float>(batch);
  if (grad_a && !grad_a->same_shape(a)) *grad_a = Tensor::uninit(a.shape());
  if (grad_b && !grad_b->same_shape(a)) *grad_b = Tensor::uninit(a.shape());
  double loss = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    loss += std::fabs(static_cast<double>(d));
    const float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
    if (grad_a) (*grad_a)[i] = s * inv_b;
    if (grad_b) (*grad_b)[i] = -s * inv_b;
  }
  return loss / batch;
}

}  // namespace dhbe
