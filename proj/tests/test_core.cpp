#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dhbe/layers.hpp"
#include "dhbe/losses.hpp"
#include "dhbe/optim.hpp"
#include "dhbe/rng.hpp"
#include "dhbe/tensor.hpp"
#include "test_util.hpp"

using namespace dhbe;
using testutil::check_layer_gradients;

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t.at(1, 2) = 5.0f;
  CHECK(t[5] == 5.0f);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 5.0f);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ContractError);
}

TEST_CASE("rng streams are deterministic and independent") {
  RngStream a = derive_stream(7, "latent");
  RngStream b = derive_stream(7, "latent");
  RngStream c = derive_stream(7, "padding");
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  bool any_diff = false;
  RngStream a2 = derive_stream(7, "latent");
  for (int i = 0; i < 10; ++i) any_diff |= (a2.next_u64() != c.next_u64());
  CHECK(any_diff);
}

TEST_CASE("normal sampler moments") {
  RngStream rng = derive_stream(3, "latent");
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("uniform_int covers range deterministically") {
  RngStream rng(12);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[static_cast<size_t>(rng.uniform_int(5))];
  for (int h : hits) CHECK(h > 800);
}

TEST_CASE("dense gradients") {
  RngStream rng(1);
  Dense layer("d", 7, 5);
  for (int64_t i = 0; i < layer.weight.value.size(); ++i)
    layer.weight.value[i] = 0.3f * static_cast<float>(rng.normal());
  Tensor x({4, 7});
  rng.fill_normal(x);
  auto res = check_layer_gradients(layer, x, Mode::kTrain, rng);
  CHECK(res.failed == 0);
}

TEST_CASE("conv2d gradients (stride 1 pad 1)") {
  RngStream rng(2);
  Conv2d layer("c", 3, 4, 3, 1, 1);
  for (int64_t i = 0; i < layer.weight.value.size(); ++i)
    layer.weight.value[i] = 0.2f * static_cast<float>(rng.normal());
  Tensor x({2, 5, 6, 3});
  rng.fill_normal(x);
  auto res = check_layer_gradients(layer, x, Mode::kTrain, rng);
  CHECK(res.failed == 0);
}

TEST_CASE("conv2d gradients (stride 2 pad 2, 5x5 kernel)") {
  RngStream rng(3);
  Conv2d layer("c", 2, 3, 5, 2, 2);
  for (int64_t i = 0; i < layer.weight.value.size(); ++i)
    layer.weight.value[i] = 0.2f * static_cast<float>(rng.normal());
  Tensor x({2, 8, 8, 2});
  rng.fill_normal(x);
  auto res = check_layer_gradients(layer, x, Mode::kTrain, rng);
  CHECK(res.failed == 0);
}

TEST_CASE("conv2d shape arithmetic") {
  Conv2d c32("c", 3, 64, 3, 1, 1);
  CHECK(c32.out_h(32) == 32);
  Conv2d c64("c", 3, 64, 5, 2, 2);
  CHECK(c64.out_h(64) == 32);
  Conv2d toy("c", 3, 32, 3, 2, 1);
  CHECK(toy.out_h(12) == 6);
  CHECK(toy.out_h(6) == 3);
  CHECK(toy.out_h(3) == 2);
}

TEST_CASE("batchnorm train-mode gradients include statistic terms") {
  RngStream rng(4);
  BatchNorm layer("bn", 3);
  Tensor x({6, 3});
  rng.fill_normal(x);
  for (int64_t i = 0; i < x.size(); ++i) x[i] = 2.0f * x[i] + 0.5f;
  auto res = check_layer_gradients(layer, x, Mode::kTrain, rng, 1e-2f, 6e-2);
  CHECK(res.failed == 0);
}

TEST_CASE("batchnorm eval-mode uses running stats") {
  RngStream rng(5);
  BatchNorm layer("bn", 2);
  Tensor x({64, 2});
  rng.fill_normal(x);
  for (int64_t i = 0; i < x.size(); ++i) x[i] = 3.0f * x[i] + 1.0f;
  // Several training passes move running stats toward (1, 9).
  for (int i = 0; i < 200; ++i) {
    NoGradGuard ng;
    layer.forward(x, Mode::kTrain);
  }
  CHECK(layer.running_mean.value[0] == doctest::Approx(1.0).epsilon(0.1));
  CHECK(layer.running_var.value[0] == doctest::Approx(9.0).epsilon(0.15));
  NoGradGuard ng;
  Tensor y = layer.forward(x, Mode::kEval);
  // Eval output is an affine map of x, not exactly standardized.
  double m = 0.0;
  for (int i = 0; i < 64; ++i) m += y.at(i, 0);
  CHECK(std::fabs(m / 64.0) < 0.2);
}

TEST_CASE("batchnorm training output is standardized per channel") {
  RngStream rng(6);
  BatchNorm layer("bn", 4);
  Tensor x({256, 4});
  rng.fill_normal(x);
  for (int64_t i = 0; i < x.size(); ++i) x[i] = 5.0f * x[i] - 2.0f;
  NoGradGuard ng;
  Tensor y = layer.forward(x, Mode::kTrain);
  for (int c = 0; c < 4; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < 256; ++r) {
      s += y.at(r, c);
      s2 += static_cast<double>(y.at(r, c)) * y.at(r, c);
    }
    const double mean = s / 256.0;
    const double var = s2 / 256.0 - mean * mean;
    CHECK(std::fabs(mean) < 1e-3);
    CHECK(std::fabs(var - 1.0) < 1e-2);
  }
}

TEST_CASE("activation gradients") {
  RngStream rng(7);
  Tensor x({3, 9});
  rng.fill_normal(x);
  {
    ReLU l("r");
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
  {
    LeakyReLU l("lr", 0.2f);
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
  {
    Tanh l("t");
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
  {
    Sigmoid l("s");
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
}

TEST_CASE("upsample and pool gradients") {
  RngStream rng(8);
  Tensor x({2, 3, 3, 2});
  rng.fill_normal(x);
  {
    UpsampleNearest2x l("u");
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
  {
    GlobalAvgPool l("p");
    CHECK(check_layer_gradients(l, x, Mode::kTrain, rng).failed == 0);
  }
}

TEST_CASE("residual block gradients") {
  RngStream rng(9);
  ResidualBlock block("rb", 3, 5, 2);
  std::vector<Parameter*> ps;
  block.collect_params(ps);
  for (Parameter* p : ps)
    if (p->name.ends_with(".w"))
      for (int64_t i = 0; i < p->value.size(); ++i)
        p->value[i] = 0.3f * static_cast<float>(rng.normal());
  Tensor x({2, 6, 6, 3});
  rng.fill_normal(x);
  auto res = check_layer_gradients(block, x, Mode::kTrain, rng, 1e-2f, 8e-2, 48);
  // The two ReLUs make the map piecewise linear; a few spot checks land on
  // kink crossings where central differences are off. Bound the fraction.
  CHECK(res.failed * 40 <= res.checked);
}

TEST_CASE("multi-pass context stacks backpropagate in reverse order") {
  RngStream rng(10);
  Dense layer("d", 4, 4);
  for (int64_t i = 0; i < layer.weight.value.size(); ++i)
    layer.weight.value[i] = static_cast<float>(rng.normal());
  Tensor x1({2, 4}), x2({2, 4});
  rng.fill_normal(x1);
  rng.fill_normal(x2);
  Tensor y1 = layer.forward(x1, Mode::kTrain);
  Tensor y2 = layer.forward(x2, Mode::kTrain);
  CHECK(layer.pending_contexts() == 2);
  Tensor g({2, 4});
  rng.fill_normal(g);
  layer.backward(g);  // consumes the x2 pass
  layer.backward(g);  // consumes the x1 pass
  CHECK(layer.pending_contexts() == 0);
  // grad accumulated over both passes equals x1^T g + x2^T g
  Tensor expect({4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      float s = 0.0f;
      for (int b = 0; b < 2; ++b) s += x1.at(b, i) * g.at(b, j) + x2.at(b, i) * g.at(b, j);
      expect.at(i, j) = s;
    }
  for (int64_t i = 0; i < expect.size(); ++i)
    CHECK(layer.weight.grad[i] == doctest::Approx(expect[i]).epsilon(1e-4));
}

TEST_CASE("no-grad forward records nothing") {
  RngStream rng(11);
  Dense layer("d", 3, 3);
  Tensor x({1, 3});
  rng.fill_normal(x);
  {
    NoGradGuard ng;
    layer.forward(x, Mode::kEval);
  }
  CHECK(layer.pending_contexts() == 0);
  CHECK_THROWS_AS(layer.backward(x), ContractError);
}

TEST_CASE("sgd matches hand-computed momentum update") {
  Parameter p("p", Tensor({1}));
  p.value[0] = 1.0f;
  Sgd opt({&p}, 0.1, 0.9, 0.0);
  p.grad[0] = 2.0f;
  opt.step();  // v=2, w=1-0.2=0.8
  CHECK(p.value[0] == doctest::Approx(0.8));
  p.zero_grad();
  p.grad[0] = 1.0f;
  opt.step();  // v=0.9*2+1=2.8, w=0.8-0.28=0.52
  CHECK(p.value[0] == doctest::Approx(0.52));
}

TEST_CASE("sgd weight decay pulls weights toward zero") {
  Parameter p("p", Tensor({1}));
  p.value[0] = 1.0f;
  Sgd opt({&p}, 0.1, 0.0, 0.5);
  p.grad[0] = 0.0f;
  opt.step();  // g = 0 + 0.5*1, w = 1 - 0.05
  CHECK(p.value[0] == doctest::Approx(0.95));
}

TEST_CASE("adam first step moves by ~lr in gradient direction") {
  Parameter p("p", Tensor({1}));
  p.value[0] = 0.0f;
  Adam opt({&p}, 1e-3);
  p.grad[0] = 5.0f;
  opt.step();
  CHECK(p.value[0] == doctest::Approx(-1e-3).epsilon(1e-3));
}

TEST_CASE("softmax cross entropy value and gradient") {
  Tensor logits({2, 3});
  logits.at(0, 0) = 1.0f;
  logits.at(0, 1) = 2.0f;
  logits.at(0, 2) = 3.0f;
  logits.at(1, 0) = 0.0f;
  logits.at(1, 1) = 0.0f;
  logits.at(1, 2) = 0.0f;
  Tensor grad;
  const double loss = softmax_cross_entropy(logits, {2, 0}, &grad);
  // sample 0: -log softmax(3) ; sample 1: -log(1/3)
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double l1 = std::log(3.0);
  CHECK(loss == doctest::Approx((l0 + l1) / 2.0));
  // finite-difference spot check
  const float eps = 1e-3f;
  logits.at(0, 1) += eps;
  const double lp = softmax_cross_entropy(logits, {2, 0}, nullptr);
  logits.at(0, 1) -= 2 * eps;
  const double lm = softmax_cross_entropy(logits, {2, 0}, nullptr);
  CHECK(grad.at(0, 1) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-3));
}

TEST_CASE("mean l1 distance: hand examples") {
  Tensor a({1, 2}), b({1, 2});
  a.at(0, 0) = 1.0f;
  a.at(0, 1) = -2.0f;
  const double v = mean_l1_distance(a, b, nullptr, nullptr);
  CHECK(v == doctest::Approx(3.0));

  // identical -> 0
  CHECK(mean_l1_distance(b, b, nullptr, nullptr) == doctest::Approx(0.0));

  // absolute homogeneity: scaling both tensors by 2 doubles the loss
  Tensor a2 = a, b2 = b;
  scale_inplace(a2, 2.0f);
  scale_inplace(b2, 2.0f);
  CHECK(mean_l1_distance(a2, b2, nullptr, nullptr) == doctest::Approx(2.0 * v));

  Tensor ga, gb;
  mean_l1_distance(a, b, &ga, &gb);
  CHECK(ga.at(0, 0) == 1.0f);
  CHECK(ga.at(0, 1) == -1.0f);
  CHECK(gb.at(0, 0) == -1.0f);
}

TEST_CASE("parameter hash is order and value sensitive") {
  Network n1, n2;
  n1.add<Dense>("d", 3, 3);
  n2.add<Dense>("d", 3, 3);
  CHECK(parameter_hash(n1) == parameter_hash(n2));
  n2.parameters()[0]->value[0] += 1.0f;
  CHECK(parameter_hash(n1) != parameter_hash(n2));
}
