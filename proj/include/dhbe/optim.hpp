#pragma once

#include <vector>

#include "dhbe/layers.hpp"

namespace dhbe {

// SGD with momentum and decoupled-into-gradient weight decay:
//   v <- momentum * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double lr, double momentum = 0.9,
      double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
    for (Parameter* p : params_) bufs_.emplace_back(p->value.shape());
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      Tensor& v = bufs_[i];
      const float lr = static_cast<float>(lr_);
      const float mom = static_cast<float>(momentum_);
      const float wd = static_cast<float>(wd_);
      for (int64_t j = 0; j < p.value.size(); ++j) {
        const float g = p.grad[j] + wd * p.value[j];
        v[j] = mom * v[j] + g;
        p.value[j] -= lr * v[j];
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> bufs_;
  double lr_, momentum_, wd_;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    ++t_;
    const float bc1 = static_cast<float>(1.0 - std::pow(b1_, static_cast<double>(t_)));
    const float bc2 = static_cast<float>(1.0 - std::pow(b2_, static_cast<double>(t_)));
    const float lr = static_cast<float>(lr_);
    const float b1 = static_cast<float>(b1_);
    const float b2 = static_cast<float>(b2_);
    const float eps = static_cast<float>(eps_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      for (int64_t j = 0; j < p.value.size(); ++j) {
        const float g = p.grad[j];
        m_[i][j] = b1 * m_[i][j] + (1.0f - b1) * g;
        v_[i][j] = b2 * v_[i][j] + (1.0f - b2) * g * g;
        const float m_hat = m_[i][j] / bc1;
        const float v_hat = v_[i][j] / bc2;
        p.value[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace dhbe
