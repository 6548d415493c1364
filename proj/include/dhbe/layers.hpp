#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dhbe/rng.hpp"
#include "dhbe/tensor.hpp"

namespace dhbe {

enum class Mode { kTrain, kEval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
  }
  void zero_grad() { std::fill(grad.data(), grad.data() + grad.size(), 0.0f); }
};

// Named non-trainable state (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

// Thread-local switch: when gradients are disabled, forward passes do not
// record contexts, so inference loops stay cheap and never unbalance the
// context stacks.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// A layer caches one context per recorded forward pass (LIFO). backward()
// consumes the most recent context, which lets a network run several forward
// passes (e.g. clean and trigger-pasted batches) before backpropagating them
// in reverse order.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& gy) = 0;
  virtual void collect_params(std::vector<Parameter*>& out) {}
  virtual void collect_buffers(std::vector<Buffer*>& out) {}
  virtual size_t pending_contexts() const { return 0; }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

 protected:
  std::string name_;
};

class Dense : public Layer {
 public:
  Dense(std::string name, int in_dim, int out_dim, bool bias = true);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  void collect_params(std::vector<Parameter*>& out) override;
  size_t pending_contexts() const override { return ctx_.size(); }

  Parameter weight;  // (in_dim, out_dim)
  Parameter bias;    // (out_dim) when enabled

 private:
  int in_dim_, out_dim_;
  bool use_bias_;
  std::vector<Tensor> ctx_;  // cached inputs
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  void collect_params(std::vector<Parameter*>& out) override;
  size_t pending_contexts() const override { return ctx_.size(); }

  int out_h(int h) const { return (h + 2 * pad_ - ksize_) / stride_ + 1; }
  int out_w(int w) const { return (w + 2 * pad_ - ksize_) / stride_ + 1; }

  Parameter weight;  // (ksize*ksize*in_ch, out_ch)

 private:
  void im2col(const Tensor& x, Tensor& patches) const;

  int in_ch_, out_ch_, ksize_, stride_, pad_;
  std::vector<Tensor> ctx_;  // cached inputs
};

// Batch normalization over the trailing (channel) dimension; accepts (B,C)
// or (B,H,W,C) inputs. Training mode normalizes with batch statistics and
// updates running statistics (momentum 0.1); eval mode uses running stats.
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, int channels, bool affine = true);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  void collect_params(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;
  size_t pending_contexts() const override { return ctx_.size(); }

  Parameter gamma, beta;
  Buffer running_mean, running_var;

  static constexpr float kEps = 1e-5f;
  static constexpr float kMomentum = 0.1f;

 private:
  struct Ctx {
    Tensor x_hat;              // normalized input
    std::vector<float> inv_std;  // per channel, for the pass that produced x_hat
    bool train = false;
    std::vector<int> in_shape;
  };
  int channels_;
  bool affine_;
  std::vector<Ctx> ctx_;
};

class ReLU : public Layer {
 public:
  explicit ReLU(std::string name) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  size_t pending_contexts() const override { return ctx_.size(); }

 private:
  std::vector<Tensor> ctx_;  // outputs (mask source)
};

class LeakyReLU : public Layer {
 public:
  LeakyReLU(std::string name, float slope) : slope_(slope) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  size_t pending_contexts() const override { return ctx_.size(); }

 private:
  float slope_;
  std::vector<Tensor> ctx_;  // inputs
};

class Tanh : public Layer {
 public:
  explicit Tanh(std::string name) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  size_t pending_contexts() const override { return ctx_.size(); }

 private:
  std::vector<Tensor> ctx_;  // outputs
};

class Sigmoid : public Layer {
 public:
  explicit Sigmoid(std::string name) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  size_t pending_contexts() const override { return ctx_.size(); }

 private:
  std::vector<Tensor> ctx_;  // outputs
};

// Multiplies by a fixed scalar (trigger-generator output scaling).
class ConstScale : public Layer {
 public:
  ConstScale(std::string name, float s) : s_(s) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  float factor() const { return s_; }

 private:
  float s_;
};

// (B, D) -> (B, h, w, c) with D = h*w*c.
class ReshapeToImage : public Layer {
 public:
  ReshapeToImage(std::string name, int h, int w, int c) : h_(h), w_(w), c_(c) {
    name_ = std::move(name);
  }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;

 private:
  int h_, w_, c_;
};

class UpsampleNearest2x : public Layer {
 public:
  explicit UpsampleNearest2x(std::string name) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
};

// (B,H,W,C) -> (B,C)
class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) { name_ = std::move(name); }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  size_t pending_contexts() const override { return ctx_.size(); }

 private:
  std::vector<std::vector<int>> ctx_;  // input shapes
};

// Sequential container. Networks are move-only; layer order defines both the
// forward graph and the parameter ordering used by optimizers/checkpoints.
class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  // Runs layers [0, n_layers) only; backward_prefix pops contexts for that
  // same range. Used for activation taps and neuron-level gradients.
  Tensor forward_prefix(const Tensor& x, size_t n_layers, Mode mode);
  Tensor backward_prefix(const Tensor& gy, size_t n_layers);

  std::vector<Parameter*> parameters();
  std::vector<Buffer*> buffers();
  size_t n_layers() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

  size_t pending_contexts() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Basic residual block: y = relu(main(x) + skip(x)), skip being identity or
// a 1x1 projection when shape changes.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(std::string name, int in_ch, int out_ch, int stride);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& gy) override;
  void collect_params(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;
  size_t pending_contexts() const override;

 private:
  Network main_;
  Network skip_;
  bool has_projection_;
  std::vector<Tensor> ctx_;  // post-sum pre-relu activations
};

// Fan-in scaled (He) initialization for every Dense/Conv2d weight in the
// network; biases and batch-norm parameters keep their built-in init.
void init_he_normal(Network& net, RngStream& rng);

// FNV-1a hash over parameter bytes; used by tests and the distillation loop
// to assert which networks an update touched.
uint64_t parameter_hash(Network& net);

}  // namespace dhbe
