#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "dhbe/errors.hpp"

namespace dhbe {

// Dense float32 tensor, row-major. Image batches use NHWC layout so that a
// (B,H,W,C) batch viewed as a (B*H*W, C) matrix needs no copies. The default
// constructor zero-fills; uninit() skips the fill for buffers every element
// of which is about to be written.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    size_ = count(shape_);
    data_ = std::make_unique<float[]>(static_cast<size_t>(size_));  // zeroed
  }
  Tensor(std::vector<int> shape, std::vector<float> data) {
    if (static_cast<int64_t>(data.size()) != count(shape))
      throw ContractError("tensor data does not match shape");
    shape_ = std::move(shape);
    size_ = static_cast<int64_t>(data.size());
    data_.reset(new float[static_cast<size_t>(size_)]);
    std::memcpy(data_.get(), data.data(), sizeof(float) * static_cast<size_t>(size_));
  }

  Tensor(const Tensor& o) : shape_(o.shape_), size_(o.size_) {
    if (o.data_) {
      data_.reset(new float[static_cast<size_t>(size_)]);
      std::memcpy(data_.get(), o.data_.get(), sizeof(float) * static_cast<size_t>(size_));
    }
  }
  Tensor& operator=(const Tensor& o) {
    if (this != &o) *this = Tensor(o);
    return *this;
  }
  Tensor(Tensor&&) = default;
  Tensor& operator=(Tensor&&) = default;

  static Tensor uninit(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = count(t.shape_);
    t.data_.reset(new float[static_cast<size_t>(t.size_)]);
    return t;
  }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.data(), t.data() + t.size_, v);
    return t;
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  float* data() { return data_.get(); }
  const float* data() const { return data_.get(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed accessors for tests and small hot-path-free code.
  float& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  float at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  float& at(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  float at(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  float& at(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  float at(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  Tensor reshaped(std::vector<int> new_shape) const {
    if (count(new_shape) != size()) throw ContractError("reshape changes element count");
    Tensor t(*this);
    t.shape_ = std::move(new_shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ContractError("negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  int64_t size_ = 0;
  std::unique_ptr<float[]> data_;
};

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ContractError("add_inplace shape mismatch");
  float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

inline void scale_inplace(Tensor& a, float s) {
  float* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i) p[i] *= s;
}

inline double l1_norm(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += std::fabs(static_cast<double>(a[i]));
  return s;
}

inline double linf_norm(const Tensor& a) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i])));
  return m;
}

inline bool all_finite(const Tensor& a) {
  for (int64_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace dhbe
