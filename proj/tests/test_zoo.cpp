#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dhbe/zoo.hpp"

using namespace dhbe;

namespace {
NormStats cifar_stats() {
  return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};
}
NormStats unit_stats() { return {{0.0f, 0.0f, 0.0f}, {1.0f, 1.0f, 1.0f}}; }
}  // namespace

TEST_CASE("resnet18-32 forward contract") {
  RngStream rng(1);
  ModelBundle m = build_classifier(ArchId::kResnet18_32, 10, cifar_stats(), rng);
  CHECK(m.input_size[0] == 32);
  Tensor x({2, 32, 32, 3});
  rng.fill_normal(x);
  NoGradGuard ng;
  Tensor y = m.logits(x, Mode::kEval);
  CHECK(y.dim(0) == 2);
  CHECK(y.dim(1) == 10);
}

TEST_CASE("resnet18-64 accepts 64x64 inputs") {
  RngStream rng(2);
  ModelBundle m = build_classifier(ArchId::kResnet18_64, 100, unit_stats(), rng);
  Tensor x({2, 64, 64, 3});
  rng.fill_normal(x);
  NoGradGuard ng;
  Tensor y = m.logits(x, Mode::kEval);
  CHECK(y.dim(1) == 100);
}

TEST_CASE("toy-cnn output vector length") {
  RngStream rng(3);
  ModelBundle m = build_classifier(ArchId::kToyCnn, 2, unit_stats(), rng, {12, 12, 3});
  Tensor x({1, 12, 12, 3});
  rng.fill_normal(x);
  NoGradGuard ng;
  Tensor y = m.logits(x, Mode::kEval);
  CHECK(y.dim(0) == 1);
  CHECK(y.dim(1) == 2);
}

TEST_CASE("bad configurations are rejected") {
  RngStream rng(4);
  CHECK_THROWS_AS(parse_arch_id("vgg16"), ConfigError);
  CHECK_THROWS_AS(build_classifier(ArchId::kToyCnn, 1, unit_stats(), rng), ConfigError);
  NormStats bad{{0.0f, 0.0f, 0.0f}, {1.0f, 0.0f, 1.0f}};
  CHECK_THROWS_AS(build_classifier(ArchId::kToyCnn, 2, bad, rng), ConfigError);
  CHECK_THROWS_AS(build_trigger_generator(256, 5, 5, 0.0f, rng), ConfigError);
  CHECK_THROWS_AS(build_trigger_generator(256, 5, 5, 1.5f, rng), ConfigError);
  CHECK_THROWS_AS(build_sample_generator(256, {24, 24, 3}, rng, /*allow_toy=*/false),
                  ConfigError);
}

TEST_CASE("classifier eval forward is bit-deterministic") {
  RngStream rng(5);
  ModelBundle m = build_classifier(ArchId::kToyCnn, 3, unit_stats(), rng, {16, 16, 3});
  Tensor x({4, 16, 16, 3});
  rng.fill_normal(x);
  NoGradGuard ng;
  Tensor y1 = m.logits(x, Mode::kEval);
  Tensor y2 = m.logits(x, Mode::kEval);
  CHECK(bit_equal(y1, y2));
}

TEST_CASE("rebuilding yields identical parameter shapes") {
  RngStream rng1(6), rng2(7);
  ModelBundle a = build_classifier(ArchId::kResnet18_32, 10, cifar_stats(), rng1);
  ModelBundle b = build_classifier(ArchId::kResnet18_32, 10, cifar_stats(), rng2);
  auto pa = a.net.parameters();
  auto pb = b.net.parameters();
  REQUIRE(pa.size() == pb.size());
  int64_t total = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value.shape() == pb[i]->value.shape());
    total += pa[i]->value.size();
  }
  CHECK(total > 11'000'000);  // resnet-18 scale
}

TEST_CASE("sample generator shapes and layer growth at 64x64") {
  RngStream rng(8);
  SampleGenerator g32 = build_sample_generator(256, {32, 32, 3}, rng);
  Tensor z = sample_latent(16, 256, rng);
  NoGradGuard ng;
  Tensor y = g32.generate(z);
  CHECK(y.shape() == std::vector<int>{16, 32, 32, 3});

  SampleGenerator g64 = build_sample_generator(256, {64, 64, 3}, rng);
  CHECK(g64.net.n_layers() == g32.net.n_layers() + 4);  // one extra upsample block
  Tensor z2 = sample_latent(2, 256, rng);
  Tensor y2 = g64.generate(z2);
  CHECK(y2.shape() == std::vector<int>{2, 64, 64, 3});
}

TEST_CASE("sample generator final BN standardizes batches in training mode") {
  RngStream rng(9);
  SampleGenerator g = build_sample_generator(256, {12, 12, 3}, rng, /*allow_toy=*/true, 32);
  Tensor z = sample_latent(256, 256, rng);
  NoGradGuard ng;
  Tensor y = g.generate(z, Mode::kTrain);
  const int64_t rows = y.size() / 3;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
      const double v = y[r * 3 + c];
      s += v;
      s2 += v * v;
    }
    const double mean = s / static_cast<double>(rows);
    const double var = s2 / static_cast<double>(rows) - mean * mean;
    CHECK(std::fabs(mean) < 1e-3);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("trigger generator: tanh range and scaled l1 bound") {
  RngStream rng(10);
  TriggerGenerator g = build_trigger_generator(256, 5, 5, 1.0f, rng);
  CHECK(g.l1_bound() == doctest::Approx(75.0));
  NoGradGuard ng;
  double max_l1 = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Tensor z = sample_latent(200, 256, rng);
    Tensor p = g.generate(z, Mode::kTrain);
    CHECK(p.shape() == std::vector<int>{200, 5, 5, 3});
    for (int i = 0; i < 200; ++i) {
      double l1 = 0.0;
      for (int j = 0; j < 75; ++j) {
        const float v = p[static_cast<int64_t>(i) * 75 + j];
        CHECK(std::fabs(v) < 1.0f);
        l1 += std::fabs(static_cast<double>(v));
      }
      max_l1 = std::max(max_l1, l1);
    }
  }
  CHECK(max_l1 <= 75.0);

  TriggerGenerator gh = build_trigger_generator(256, 5, 5, 0.5f, rng);
  CHECK(gh.l1_bound() == doctest::Approx(37.5));
  Tensor z = sample_latent(64, 256, rng);
  Tensor p = gh.generate(z, Mode::kTrain);
  for (int i = 0; i < 64; ++i) {
    double l1 = 0.0;
    for (int j = 0; j < 75; ++j) l1 += std::fabs(static_cast<double>(p[i * 75 + j]));
    CHECK(l1 <= 37.5);
  }
}

TEST_CASE("trigger generator 7x7 shape and open range") {
  RngStream rng(11);
  TriggerGenerator g = build_trigger_generator(256, 7, 7, 1.0f, rng);
  NoGradGuard ng;
  Tensor z = sample_latent(32, 256, rng);
  Tensor p = g.generate(z, Mode::kTrain);
  CHECK(p.shape() == std::vector<int>{32, 7, 7, 3});
  for (int64_t i = 0; i < p.size(); ++i) CHECK(std::fabs(p[i]) < 0.9999999f);
}

TEST_CASE("larger trigger generators follow the upsampling variants") {
  RngStream rng(12);
  NoGradGuard ng;
  TriggerGenerator g10 = build_trigger_generator(256, 10, 10, 1.0f, rng);
  Tensor z = sample_latent(4, 256, rng);
  CHECK(g10.generate(z).shape() == std::vector<int>{4, 10, 10, 3});
  TriggerGenerator g32 = build_trigger_generator(256, 32, 32, 1.0f, rng);
  CHECK(g32.generate(z).shape() == std::vector<int>{4, 32, 32, 3});
  CHECK(g32.net.n_layers() > g10.net.n_layers());
}

TEST_CASE("sample_latent determinism and shape") {
  RngStream a = derive_stream(7, "latent");
  RngStream b = derive_stream(7, "latent");
  Tensor za = sample_latent(128, 256, a);
  Tensor zb = sample_latent(128, 256, b);
  CHECK(bit_equal(za, zb));
  RngStream c(1);
  CHECK(sample_latent(1, 256, c).shape() == std::vector<int>{1, 256});
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dhbe_zoo_test";
  fs::create_directories(dir);
  RngStream rng(13);
  ModelBundle m = build_classifier(ArchId::kToyCnn, 2, unit_stats(), rng, {12, 12, 3});
  // dirty the running stats so buffers carry non-default values
  Tensor x({32, 12, 12, 3});
  rng.fill_normal(x);
  {
    NoGradGuard ng;
    m.logits(x, Mode::kTrain);
  }
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_bundle(m, p1);
  ModelBundle loaded = load_bundle(p1);
  save_bundle(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());

  NoGradGuard ng;
  CHECK(bit_equal(m.logits(x, Mode::kEval), loaded.logits(x, Mode::kEval)));
  fs::remove_all(dir);
}

TEST_CASE("generator checkpoints restore function exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dhbe_zoo_gen";
  fs::create_directories(dir);
  RngStream rng(14);
  SampleGenerator g = build_sample_generator(64, {12, 12, 3}, rng, true, 32);
  TriggerGenerator gp = build_trigger_generator(64, 5, 5, 0.7f, rng);
  save_sample_generator(g, (dir / "g.ckpt").string());
  save_trigger_generator(gp, (dir / "gp.ckpt").string());
  SampleGenerator g2 = load_sample_generator((dir / "g.ckpt").string());
  TriggerGenerator gp2 = load_trigger_generator((dir / "gp.ckpt").string());
  NoGradGuard ng;
  RngStream zr(15);
  Tensor z = sample_latent(8, 64, zr);
  CHECK(bit_equal(g.generate(z, Mode::kEval), g2.generate(z, Mode::kEval)));
  CHECK(bit_equal(gp.generate(z, Mode::kEval), gp2.generate(z, Mode::kEval)));
  CHECK(gp2.scale == doctest::Approx(0.7f));
  fs::remove_all(dir);
}
