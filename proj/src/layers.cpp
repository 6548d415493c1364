#include "dhbe/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dhbe {

namespace {
// Large activation/scratch buffers turn over every step; keep them on the
// heap free-list instead of mmap-ing fresh pages each call.
struct MallocTuning {
  MallocTuning() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  }
} g_malloc_tuning;
}  // namespace

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, int in_dim, int out_dim, bool bias)
    : weight(name + ".w", Tensor({in_dim, out_dim})),
      bias(name + ".b", Tensor({out_dim})),
      in_dim_(in_dim),
      out_dim_(out_dim),
      use_bias_(bias) {
  name_ = std::move(name);
}

Tensor Dense::forward(const Tensor& x, Mode) {
  if (x.ndim() != 2 || x.dim(1) != in_dim_) throw ContractError("dense input shape");
  const int b = x.dim(0);
  Tensor y = Tensor::uninit({b, out_dim_});
  ConstMatMap xm(x.data(), b, in_dim_);
  ConstMatMap wm(weight.value.data(), in_dim_, out_dim_);
  MatMap ym(y.data(), b, out_dim_);
  ym.noalias() = xm * wm;
  if (use_bias_) {
    const float* bp = bias.value.data();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < out_dim_; ++j) y.at(i, j) += bp[j];
  }
  if (grad_enabled()) ctx_.push_back(x);
  return y;
}

Tensor Dense::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("dense backward without forward");
  Tensor x = std::move(ctx_.back());
  ctx_.pop_back();
  const int b = x.dim(0);
  ConstMatMap xm(x.data(), b, in_dim_);
  ConstMatMap gym(gy.data(), b, out_dim_);
  ConstMatMap wm(weight.value.data(), in_dim_, out_dim_);
  MatMap gwm(weight.grad.data(), in_dim_, out_dim_);
  gwm.noalias() += xm.transpose() * gym;
  if (use_bias_) {
    float* gb = bias.grad.data();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < out_dim_; ++j) gb[j] += gy.at(i, j);
  }
  Tensor gx = Tensor::uninit({b, in_dim_});
  MatMap gxm(gx.data(), b, in_dim_);
  gxm.noalias() = gym * wm.transpose();
  return gx;
}

void Dense::collect_params(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (use_bias_) out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// Conv2d (NHWC, im2col + GEMM)

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad)
    : weight(name + ".w", Tensor({ksize * ksize * in_ch, out_ch})),
      in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad) {
  name_ = std::move(name);
}

void Conv2d::im2col(const Tensor& x, Tensor& patches) const {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = out_h(h), ow = out_w(w);
  const int k = ksize_ * ksize_ * in_ch_;
  const int row_seg = ksize_ * in_ch_;
  float* pp = patches.data();
  const float* xp = x.data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float* row = pp + ((static_cast<int64_t>(bi) * oh + oy) * ow + ox) * k;
        for (int ky = 0; ky < ksize_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          float* seg = row + ky * row_seg;
          if (iy < 0 || iy >= h) {
            std::memset(seg, 0, sizeof(float) * static_cast<size_t>(row_seg));
            continue;
          }
          const int ix0 = ox * stride_ - pad_;
          // Contiguous span of valid kx positions.
          int kx_lo = ix0 < 0 ? -ix0 : 0;
          int kx_hi = ix0 + ksize_ > w ? w - ix0 : ksize_;
          if (kx_lo > 0) std::memset(seg, 0, sizeof(float) * static_cast<size_t>(kx_lo) * in_ch_);
          if (kx_hi < ksize_)
            std::memset(seg + kx_hi * in_ch_, 0,
                        sizeof(float) * static_cast<size_t>(ksize_ - kx_hi) * in_ch_);
          if (kx_hi > kx_lo) {
            const float* src = xp + ((static_cast<int64_t>(bi) * h + iy) * w + ix0 + kx_lo) * in_ch_;
            std::memcpy(seg + kx_lo * in_ch_, src,
                        sizeof(float) * static_cast<size_t>(kx_hi - kx_lo) * in_ch_);
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  if (x.ndim() != 4 || x.dim(3) != in_ch_) throw ContractError("conv input shape");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = out_h(h), ow = out_w(w);
  if (oh <= 0 || ow <= 0) throw ContractError("conv output would be empty");
  const int k = ksize_ * ksize_ * in_ch_;
  const int64_t m = static_cast<int64_t>(b) * oh * ow;
  Tensor patches = Tensor::uninit({static_cast<int>(m), k});
  im2col(x, patches);
  Tensor y = Tensor::uninit({b, oh, ow, out_ch_});
  ConstMatMap pm(patches.data(), m, k);
  ConstMatMap wm(weight.value.data(), k, out_ch_);
  MatMap ym(y.data(), m, out_ch_);
  ym.noalias() = pm * wm;
  if (grad_enabled()) ctx_.push_back(x);
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("conv backward without forward");
  Tensor x = std::move(ctx_.back());
  ctx_.pop_back();
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = out_h(h), ow = out_w(w);
  const int k = ksize_ * ksize_ * in_ch_;
  const int64_t m = static_cast<int64_t>(b) * oh * ow;

  // Weight gradient: recompute patches (cheaper than caching them).
  Tensor patches = Tensor::uninit({static_cast<int>(m), k});
  im2col(x, patches);
  ConstMatMap pm(patches.data(), m, k);
  ConstMatMap gym(gy.data(), m, out_ch_);
  MatMap gwm(weight.grad.data(), k, out_ch_);
  gwm.noalias() += pm.transpose() * gym;

  // Input gradient: col2im of gy * W^T.
  Tensor gpatch = Tensor::uninit({static_cast<int>(m), k});
  ConstMatMap wm(weight.value.data(), k, out_ch_);
  MatMap gpm(gpatch.data(), m, k);
  gpm.noalias() = gym * wm.transpose();

  Tensor gx({b, h, w, in_ch_});
  float* gxp = gx.data();
  const float* gpp = gpatch.data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float* row = gpp + ((static_cast<int64_t>(bi) * oh + oy) * ow + ox) * k;
        for (int ky = 0; ky < ksize_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < ksize_; ++kx) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= w) continue;
            float* dst = gxp + ((static_cast<int64_t>(bi) * h + iy) * w + ix) * in_ch_;
            const float* src = row + (ky * ksize_ + kx) * in_ch_;
            for (int c = 0; c < in_ch_; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
  return gx;
}

void Conv2d::collect_params(std::vector<Parameter*>& out) { out.push_back(&weight); }

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, bool affine)
    : gamma(name + ".gamma", Tensor::full({channels}, 1.0f)),
      beta(name + ".beta", Tensor({channels})),
      running_mean{name + ".running_mean", Tensor({channels})},
      running_var{name + ".running_var", Tensor::full({channels}, 1.0f)},
      channels_(channels),
      affine_(affine) {
  name_ = std::move(name);
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  if (x.dim(x.ndim() - 1) != channels_) throw ContractError("batchnorm channel mismatch");
  const int64_t rows = x.size() / channels_;
  std::vector<float> mean(channels_), inv_std(channels_);
  if (mode == Mode::kTrain) {
    std::vector<double> acc(channels_, 0.0), acc2(channels_, 0.0);
    const float* xp = x.data();
    for (int64_t r = 0; r < rows; ++r) {
      const float* px = xp + r * channels_;
      for (int c = 0; c < channels_; ++c) {
        acc[c] += px[c];
        acc2[c] += static_cast<double>(px[c]) * px[c];
      }
    }
    for (int c = 0; c < channels_; ++c) {
      const double m = acc[c] / static_cast<double>(rows);
      double var = acc2[c] / static_cast<double>(rows) - m * m;
      if (var < 0.0) var = 0.0;
      mean[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + kEps));
      // Running stats track the unbiased variance.
      const double unbiased = rows > 1 ? var * static_cast<double>(rows) / (rows - 1) : var;
      running_mean.value[c] =
          (1.0f - kMomentum) * running_mean.value[c] + kMomentum * static_cast<float>(m);
      running_var.value[c] =
          (1.0f - kMomentum) * running_var.value[c] + kMomentum * static_cast<float>(unbiased);
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean[c] = running_mean.value[c];
      inv_std[c] = 1.0f / std::sqrt(running_var.value[c] + kEps);
    }
  }

  Tensor x_hat = Tensor::uninit(x.shape());
  Tensor y = Tensor::uninit(x.shape());
  const float* xp = x.data();
  float* hp = x_hat.data();
  float* yp = y.data();
  const float* gp = gamma.value.data();
  const float* bp = beta.value.data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const float* px = xp + r * channels_;
    float* ph = hp + r * channels_;
    float* py = yp + r * channels_;
    for (int c = 0; c < channels_; ++c) {
      const float h = (px[c] - mean[c]) * inv_std[c];
      ph[c] = h;
      py[c] = affine_ ? gp[c] * h + bp[c] : h;
    }
  }
  if (grad_enabled())
    ctx_.push_back(Ctx{std::move(x_hat), std::move(inv_std), mode == Mode::kTrain, x.shape()});
  return y;
}

Tensor BatchNorm::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("batchnorm backward without forward");
  Ctx ctx = std::move(ctx_.back());
  ctx_.pop_back();
  const int64_t rows = gy.size() / channels_;
  const float* gyp = gy.data();
  const float* hp = ctx.x_hat.data();

  std::vector<double> sum_gy(channels_, 0.0), sum_gy_h(channels_, 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const float* pg = gyp + r * channels_;
    const float* ph = hp + r * channels_;
    for (int c = 0; c < channels_; ++c) {
      sum_gy[c] += pg[c];
      sum_gy_h[c] += static_cast<double>(pg[c]) * ph[c];
    }
  }
  if (affine_) {
    for (int c = 0; c < channels_; ++c) {
      gamma.grad[c] += static_cast<float>(sum_gy_h[c]);
      beta.grad[c] += static_cast<float>(sum_gy[c]);
    }
  }

  Tensor gx = Tensor::uninit(ctx.in_shape);
  float* gxp = gx.data();
  const float* gp = gamma.value.data();
  if (ctx.train) {
    std::vector<float> mean_gy(channels_), mean_gy_h(channels_);
    for (int c = 0; c < channels_; ++c) {
      mean_gy[c] = static_cast<float>(sum_gy[c] / static_cast<double>(rows));
      mean_gy_h[c] = static_cast<float>(sum_gy_h[c] / static_cast<double>(rows));
    }
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const float* pg = gyp + r * channels_;
      const float* ph = hp + r * channels_;
      float* px = gxp + r * channels_;
      for (int c = 0; c < channels_; ++c) {
        const float g = affine_ ? gp[c] : 1.0f;
        px[c] = g * ctx.inv_std[c] * (pg[c] - mean_gy[c] - ph[c] * mean_gy_h[c]);
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const float* pg = gyp + r * channels_;
      float* px = gxp + r * channels_;
      for (int c = 0; c < channels_; ++c) {
        const float g = affine_ ? gp[c] : 1.0f;
        px[c] = g * ctx.inv_std[c] * pg[c];
      }
    }
  }
  return gx;
}

void BatchNorm::collect_params(std::vector<Parameter*>& out) {
  if (affine_) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
}

void BatchNorm::collect_buffers(std::vector<Buffer*>& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x, Mode) {
  Tensor y = Tensor::uninit(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (grad_enabled()) ctx_.push_back(y);
  return y;
}

Tensor ReLU::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("relu backward without forward");
  Tensor y = std::move(ctx_.back());
  ctx_.pop_back();
  Tensor gx = Tensor::uninit(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gx[i] = y[i] > 0.0f ? gy[i] : 0.0f;
  return gx;
}

Tensor LeakyReLU::forward(const Tensor& x, Mode) {
  Tensor y = Tensor::uninit(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : slope_ * x[i];
  if (grad_enabled()) ctx_.push_back(x);
  return y;
}

Tensor LeakyReLU::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("leaky_relu backward without forward");
  Tensor x = std::move(ctx_.back());
  ctx_.pop_back();
  Tensor gx = Tensor::uninit(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gx[i] = x[i] > 0.0f ? gy[i] : slope_ * gy[i];
  return gx;
}

Tensor Tanh::forward(const Tensor& x, Mode) {
  Tensor y = Tensor::uninit(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  if (grad_enabled()) ctx_.push_back(y);
  return y;
}

Tensor Tanh::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("tanh backward without forward");
  Tensor y = std::move(ctx_.back());
  ctx_.pop_back();
  Tensor gx = Tensor::uninit(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * (1.0f - y[i] * y[i]);
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
  Tensor y = Tensor::uninit(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
  if (grad_enabled()) ctx_.push_back(y);
  return y;
}

Tensor Sigmoid::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("sigmoid backward without forward");
  Tensor y = std::move(ctx_.back());
  ctx_.pop_back();
  Tensor gx = Tensor::uninit(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * y[i] * (1.0f - y[i]);
  return gx;
}

Tensor ConstScale::forward(const Tensor& x, Mode) {
  Tensor y = x;
  scale_inplace(y, s_);
  return y;
}

Tensor ConstScale::backward(const Tensor& gy) {
  Tensor gx = gy;
  scale_inplace(gx, s_);
  return gx;
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor ReshapeToImage::forward(const Tensor& x, Mode) {
  return x.reshaped({x.dim(0), h_, w_, c_});
}

Tensor ReshapeToImage::backward(const Tensor& gy) {
  return gy.reshaped({gy.dim(0), h_ * w_ * c_});
}

Tensor UpsampleNearest2x::forward(const Tensor& x, Mode) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor y = Tensor::uninit({b, 2 * h, 2 * w, c});
  const float* xp = x.data();
  float* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const float* src = xp + ((static_cast<int64_t>(bi) * h + i) * w + j) * c;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            float* dst =
                yp + ((static_cast<int64_t>(bi) * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * c;
            std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(c));
          }
      }
    }
  }
  return y;
}

Tensor UpsampleNearest2x::backward(const Tensor& gy) {
  const int b = gy.dim(0), h2 = gy.dim(1), w2 = gy.dim(2), c = gy.dim(3);
  const int h = h2 / 2, w = w2 / 2;
  Tensor gx({b, h, w, c});
  const float* gp = gy.data();
  float* xp = gx.data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float* dst = xp + ((static_cast<int64_t>(bi) * h + i) * w + j) * c;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            const float* src =
                gp + ((static_cast<int64_t>(bi) * h2 + 2 * i + di) * w2 + 2 * j + dj) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
          }
      }
    }
  }
  return gx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor y({b, c});
  const float inv = 1.0f / static_cast<float>(h * w);
  const float* xp = x.data();
  for (int bi = 0; bi < b; ++bi) {
    float* py = y.data() + static_cast<int64_t>(bi) * c;
    const float* px = xp + static_cast<int64_t>(bi) * h * w * c;
    for (int i = 0; i < h * w; ++i)
      for (int k = 0; k < c; ++k) py[k] += px[i * c + k];
    for (int k = 0; k < c; ++k) py[k] *= inv;
  }
  if (grad_enabled()) ctx_.push_back(x.shape());
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("avgpool backward without forward");
  std::vector<int> shape = std::move(ctx_.back());
  ctx_.pop_back();
  const int b = shape[0], h = shape[1], w = shape[2], c = shape[3];
  Tensor gx = Tensor::uninit(shape);
  const float inv = 1.0f / static_cast<float>(h * w);
  for (int bi = 0; bi < b; ++bi) {
    const float* pg = gy.data() + static_cast<int64_t>(bi) * c;
    float* px = gx.data() + static_cast<int64_t>(bi) * h * w * c;
    for (int i = 0; i < h * w; ++i)
      for (int k = 0; k < c; ++k) px[i * c + k] = pg[k] * inv;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Network

Tensor Network::forward(const Tensor& x, Mode mode) {
  return forward_prefix(x, layers_.size(), mode);
}

Tensor Network::backward(const Tensor& gy) { return backward_prefix(gy, layers_.size()); }

Tensor Network::forward_prefix(const Tensor& x, size_t n_layers, Mode mode) {
  Tensor h = x;
  for (size_t i = 0; i < n_layers; ++i) h = layers_[i]->forward(h, mode);
  return h;
}

Tensor Network::backward_prefix(const Tensor& gy, size_t n_layers) {
  Tensor g = gy;
  for (size_t i = n_layers; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) l->collect_params(out);
  return out;
}

std::vector<Buffer*> Network::buffers() {
  std::vector<Buffer*> out;
  for (auto& l : layers_) l->collect_buffers(out);
  return out;
}

size_t Network::pending_contexts() const {
  size_t n = 0;
  for (const auto& l : layers_) n += l->pending_contexts();
  return n;
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(std::string name, int in_ch, int out_ch, int stride)
    : has_projection_(stride != 1 || in_ch != out_ch) {
  name_ = name;
  main_.add<Conv2d>(name + ".conv1", in_ch, out_ch, 3, stride, 1);
  main_.add<BatchNorm>(name + ".bn1", out_ch);
  main_.add<ReLU>(name + ".relu1");
  main_.add<Conv2d>(name + ".conv2", out_ch, out_ch, 3, 1, 1);
  main_.add<BatchNorm>(name + ".bn2", out_ch);
  if (has_projection_) {
    skip_.add<Conv2d>(name + ".proj", in_ch, out_ch, 1, stride, 0);
    skip_.add<BatchNorm>(name + ".proj_bn", out_ch);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor m = main_.forward(x, mode);
  Tensor s = has_projection_ ? skip_.forward(x, mode) : x;
  add_inplace(m, s);
  Tensor y = Tensor::uninit(m.shape());
  for (int64_t i = 0; i < m.size(); ++i) y[i] = m[i] > 0.0f ? m[i] : 0.0f;
  if (grad_enabled()) ctx_.push_back(y);
  return y;
}

Tensor ResidualBlock::backward(const Tensor& gy) {
  if (ctx_.empty()) throw ContractError("residual backward without forward");
  Tensor y = std::move(ctx_.back());
  ctx_.pop_back();
  Tensor gsum = Tensor::uninit(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gsum[i] = y[i] > 0.0f ? gy[i] : 0.0f;
  Tensor gskip = has_projection_ ? skip_.backward(gsum) : gsum;
  Tensor gmain = main_.backward(gsum);
  add_inplace(gmain, gskip);
  return gmain;
}

void ResidualBlock::collect_params(std::vector<Parameter*>& out) {
  for (Parameter* p : main_.parameters()) out.push_back(p);
  for (Parameter* p : skip_.parameters()) out.push_back(p);
}

void ResidualBlock::collect_buffers(std::vector<Buffer*>& out) {
  for (Buffer* b : main_.buffers()) out.push_back(b);
  for (Buffer* b : skip_.buffers()) out.push_back(b);
}

size_t ResidualBlock::pending_contexts() const {
  return main_.pending_contexts() + skip_.pending_contexts() + ctx_.size();
}

// ---------------------------------------------------------------------------

void init_he_normal(Network& net, RngStream& rng) {
  for (Parameter* p : net.parameters()) {
    if (p->name.size() >= 2 && p->name.compare(p->name.size() - 2, 2, ".w") == 0) {
      // Weight layout is (fan_in, fan_out) for Dense and Conv2d alike.
      const float stddev = std::sqrt(2.0f / static_cast<float>(p->value.dim(0)));
      for (int64_t i = 0; i < p->value.size(); ++i)
        p->value[i] = stddev * static_cast<float>(rng.normal());
    }
  }
}

namespace {
uint64_t fnv1a_bytes(uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

uint64_t parameter_hash(Network& net) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (Parameter* p : net.parameters())
    h = fnv1a_bytes(h, p->value.data(), sizeof(float) * static_cast<size_t>(p->value.size()));
  return h;
}

}  // namespace dhbe
