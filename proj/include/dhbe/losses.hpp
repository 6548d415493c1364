#pragma once

#include <utility>
#include <vector>

#include "dhbe/tensor.hpp"

namespace dhbe {

// Softmax cross-entropy over logits (B, n_classes). Returns the mean loss and
// writes d(loss)/d(logits) into grad (same shape as logits).
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);

// Mean over the batch of the per-sample l1 distance between two logit
// tensors (the discrepancy form used throughout distillation):
//   L = 1/B * sum_i ||a_i - b_i||_1
// When grads are requested, d(L)/da = sign(a-b)/B and d(L)/db = -d(L)/da,
// with sign(0) taken as 0.
double mean_l1_distance(const Tensor& a, const Tensor& b, Tensor* grad_a, Tensor* grad_b);

}  // namespace dhbe
