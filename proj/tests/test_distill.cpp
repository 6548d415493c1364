#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dhbe/data.hpp"
#include "dhbe/distill.hpp"
#include "dhbe/train.hpp"

using namespace dhbe;

namespace {

// Small backdoor-free teacher for engine tests.
ModelBundle tiny_teacher(uint64_t seed, int hw = 12) {
  ToySpec spec;
  spec.train_n = 256;
  spec.height = spec.width = hw;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, seed);
  TrainSchedule s;
  s.epochs = 2;
  s.batch_size = 64;
  s.lr = 0.05;
  s.decay_epochs = {};
  s.crop_pad = 2;
  RngStream rng = derive_stream(seed, "teacher");
  return train_classifier(ds, ArchId::kToyCnn, s, rng);
}

DistillConfig tiny_config(int epochs = 1, int iters = 2) {
  DistillConfig c;
  c.epochs = epochs;
  c.iterations_per_epoch = iters;
  c.batch_size = 16;
  c.lr_decay_epochs = {};
  c.trigger_h = c.trigger_w = 3;
  c.latent_dim = 64;
  c.gen_base_channels = 16;
  return c;
}

}  // namespace

TEST_CASE("discrepancy_loss hand values") {
  Tensor a({1, 2}), b({1, 2});
  CHECK(discrepancy_loss(a, b) == doctest::Approx(0.0));
  a.at(0, 0) = 1.0f;
  a.at(0, 1) = -2.0f;
  CHECK(discrepancy_loss(a, b) == doctest::Approx(3.0));
  Tensor a2 = a, b2 = b;
  scale_inplace(a2, 2.0f);
  CHECK(discrepancy_loss(a2, b2) == doctest::Approx(2.0 * 3.0));
  a.at(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(discrepancy_loss(a, b), TrainingError);
}

TEST_CASE("regularization_loss: zero trigger gives zero with frozen normalization") {
  RngStream rng(1);
  Network net;
  net.add<Conv2d>("c", 3, 4, 1, 1, 0);
  net.add<BatchNorm>("bn", 4);
  init_he_normal(net, rng);
  Tensor x({2, 5, 5, 3});
  rng.fill_normal(x);
  Tensor zeros({2, 5, 5, 3});
  CHECK(regularization_loss(net, x, zeros, Mode::kEval) == doctest::Approx(0.0));
}

TEST_CASE("regularization_loss: linear model closed form") {
  // 1x1 conv without normalization is a per-pixel linear map, so
  // ||S(x) - S(x+p)||_1 = sum over pixels of ||W^T p_pixel||_1.
  RngStream rng(2);
  Network net;
  auto& conv = net.add<Conv2d>("c", 2, 3, 1, 1, 0);
  rng.fill_normal(conv.weight.value);
  Tensor x({1, 4, 4, 2});
  rng.fill_normal(x);
  Tensor p({1, 4, 4, 2});
  rng.fill_normal(p);
  double expected = 0.0;
  for (int pos = 0; pos < 16; ++pos)
    for (int o = 0; o < 3; ++o) {
      double v = 0.0;
      for (int c = 0; c < 2; ++c) v += conv.weight.value.at(c, o) * p[pos * 2 + c];
      expected += std::fabs(v);
    }
  CHECK(regularization_loss(net, x, p, Mode::kEval) ==
        doctest::Approx(expected).epsilon(1e-3));
  Tensor bad({1, 3, 3, 2});
  CHECK_THROWS_AS(regularization_loss(net, x, bad, Mode::kEval), ContractError);
}

TEST_CASE("pad_trigger_random: identity when patch fills the image") {
  RngStream rng(3);
  Tensor patches({4, 5, 5, 3});
  rng.fill_normal(patches);
  RngStream pr(4);
  Tensor padded = pad_trigger_random(patches, 5, 5, pr);
  CHECK(bit_equal(padded, patches));
}

TEST_CASE("pad_trigger_random: uniform coverage and exact l1 preservation") {
  RngStream rng(5);
  Tensor patches({1, 1, 1, 1});
  patches[0] = 1.0f;
  RngStream pr(6);
  std::vector<int> hits(9, 0);
  for (int rep = 0; rep < 10000; ++rep) {
    std::vector<std::pair<int, int>> pos;
    Tensor padded = pad_trigger_random(patches, 3, 3, pr, &pos);
    ++hits[static_cast<size_t>(pos[0].first * 3 + pos[0].second)];
    CHECK(l1_norm(padded) == l1_norm(patches));
  }
  // all 9 cells observed, each within 3 sigma of 10000/9
  const double expect = 10000.0 / 9.0;
  const double sigma = std::sqrt(10000.0 * (1.0 / 9.0) * (8.0 / 9.0));
  for (int h : hits) {
    CHECK(h > 0);
    CHECK(std::fabs(h - expect) <= 3.0 * sigma);
  }
  // multi-channel patches keep mass exactly
  Tensor big({3, 2, 2, 3});
  rng.fill_normal(big);
  Tensor padded = pad_trigger_random(big, 7, 9, pr);
  CHECK(l1_norm(padded) == l1_norm(big));
  CHECK_THROWS_AS(pad_trigger_random(big, 1, 1, pr), ContractError);
}

TEST_CASE("mix_trigger_into_fake arithmetic") {
  NormStats unit{{0.0f, 0.0f, 0.0f}, {1.0f, 1.0f, 1.0f}};
  NormStats stats{{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}};
  RngStream rng(7);
  Tensor x({2, 3, 3, 3});
  rng.fill_normal(x);

  Tensor zeros({2, 3, 3, 3});
  Tensor same = mix_trigger_into_fake(x, zeros, stats);
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(std::fabs(same[i] - x[i]) <= 1e-6f);

  // unit stats reduce mixing to plain addition
  Tensor p({2, 3, 3, 3});
  rng.fill_normal(p);
  Tensor mixed_unit = mix_trigger_into_fake(x, p, unit);
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(mixed_unit[i] == doctest::Approx(x[i] + p[i]).epsilon(1e-6));

  // delta 0.1 at one pixel under (0.5, 0.25) stats -> normalized delta 0.4
  Tensor one({2, 3, 3, 3});
  one[4] = 0.1f;
  Tensor mixed = mix_trigger_into_fake(x, one, stats);
  CHECK(mixed[4] - x[4] == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(std::fabs(mixed[5] - x[5]) <= 1e-6f);
}

TEST_CASE("student_step: teacher copy in eval mode with lambda 0 is a weight-decay no-op") {
  ModelBundle teacher = tiny_teacher(21);
  DistillConfig cfg = tiny_config();
  cfg.lambda = 0.0;
  cfg.student_train_mode = false;  // share eval-mode statistics with the teacher
  DistillEngine eng(teacher, cfg, 21);
  auto before = eng.student().net.parameters();
  std::vector<Tensor> snapshot;
  for (Parameter* p : before) snapshot.push_back(p->value);

  auto draw = eng.draw_batch();
  double d = -1.0, r = -1.0;
  eng.student_step(draw, &d, &r);
  CHECK(d == doctest::Approx(0.0));
  const double lr_wd = cfg.student_lr * cfg.student_weight_decay;
  auto after = eng.student().net.parameters();
  for (size_t i = 0; i < after.size(); ++i)
    for (int64_t j = 0; j < after[i]->value.size(); ++j)
      CHECK(after[i]->value[j] ==
            doctest::Approx(snapshot[i][j] * (1.0 - lr_wd)).epsilon(1e-5));
}

TEST_CASE("update isolation across the three steps") {
  ModelBundle teacher = tiny_teacher(22);
  DistillEngine eng(teacher, tiny_config(), 22);
  const uint64_t t0 = parameter_hash(eng.teacher().net);
  const uint64_t s0 = parameter_hash(eng.student().net);
  const uint64_t g0 = parameter_hash(eng.sample_generator().net);
  const uint64_t p0 = parameter_hash(eng.trigger_generator().net);

  eng.student_step(eng.draw_batch());
  CHECK(parameter_hash(eng.student().net) != s0);
  CHECK(parameter_hash(eng.teacher().net) == t0);
  CHECK(parameter_hash(eng.sample_generator().net) == g0);
  CHECK(parameter_hash(eng.trigger_generator().net) == p0);

  const uint64_t s1 = parameter_hash(eng.student().net);
  eng.generator_step(eng.draw_batch());
  CHECK(parameter_hash(eng.sample_generator().net) != g0);
  CHECK(parameter_hash(eng.student().net) == s1);
  CHECK(parameter_hash(eng.teacher().net) == t0);
  CHECK(parameter_hash(eng.trigger_generator().net) == p0);

  const uint64_t g1 = parameter_hash(eng.sample_generator().net);
  eng.trigger_generator_step(eng.draw_batch());
  CHECK(parameter_hash(eng.trigger_generator().net) != p0);
  CHECK(parameter_hash(eng.student().net) == s1);
  CHECK(parameter_hash(eng.sample_generator().net) == g1);
  CHECK(parameter_hash(eng.teacher().net) == t0);
  eng.verify_teacher_frozen();
}

TEST_CASE("finite-difference directions at small learning rate") {
  // student_step must decrease, the two generator steps must increase their
  // objectives when re-evaluated on the same frozen batch.
  int student_ok = 0, gen_ok = 0, trig_ok = 0;
  const int trials = 5;
  for (int t = 0; t < trials; ++t) {
    ModelBundle teacher = tiny_teacher(30 + static_cast<uint64_t>(t));
    DistillConfig cfg = tiny_config();
    cfg.student_lr = 1e-4;
    cfg.gen_lr = 1e-4;
    cfg.trigger_gen_lr = 1e-4;
    cfg.student_weight_decay = 0.0;
    {
      DistillEngine eng(teacher, cfg, 100 + static_cast<uint64_t>(t));
      // move the student off the teacher so D > 0
      eng.generator_step(eng.draw_batch());
      auto draw = eng.draw_batch();
      const double before = eng.eval_student_loss(draw);
      eng.student_step(draw);
      student_ok += eng.eval_student_loss(draw) < before;
    }
    {
      DistillEngine eng(teacher, cfg, 200 + static_cast<uint64_t>(t));
      eng.student_step(eng.draw_batch());  // create teacher-student gap
      auto draw = eng.draw_batch();
      const double before = eng.eval_discrepancy(draw);
      eng.generator_step(draw);
      gen_ok += eng.eval_discrepancy(draw) > before;
    }
    {
      DistillEngine eng(teacher, cfg, 300 + static_cast<uint64_t>(t));
      auto draw = eng.draw_batch();
      const double before = eng.eval_regularization(draw);
      eng.trigger_generator_step(draw);
      trig_ok += eng.eval_regularization(draw) > before;
    }
  }
  CHECK(student_ok >= trials - 1);
  CHECK(gen_ok >= trials - 1);
  CHECK(trig_ok >= trials - 1);
}

TEST_CASE("run_dhbe: zero epochs returns a bit-identical student") {
  ModelBundle teacher = tiny_teacher(23);
  DistillConfig cfg = tiny_config(0, 0);
  auto result = run_dhbe(teacher, cfg, 23);
  auto tp = teacher.net.parameters();
  auto sp = result.student.net.parameters();
  REQUIRE(tp.size() == sp.size());
  for (size_t i = 0; i < tp.size(); ++i) CHECK(bit_equal(tp[i]->value, sp[i]->value));
  auto tb = teacher.net.buffers();
  auto sb = result.student.net.buffers();
  for (size_t i = 0; i < tb.size(); ++i) CHECK(bit_equal(tb[i]->value, sb[i]->value));
  CHECK(result.history.empty());
}

TEST_CASE("run_dhbe: iteration accounting, finiteness and teacher freshness") {
  ModelBundle teacher = tiny_teacher(24);
  const uint64_t t0 = parameter_hash(teacher.net);
  DistillConfig cfg = tiny_config(2, 3);
  auto result = run_dhbe(teacher, cfg, 24);
  CHECK(result.history.size() == 6);
  for (const auto& rec : result.history) {
    CHECK(std::isfinite(rec.d_term));
    CHECK(std::isfinite(rec.r_term));
    CHECK(std::isfinite(rec.gen_loss));
    CHECK(std::isfinite(rec.trigger_gen_loss));
    CHECK(rec.student_lr == doctest::Approx(cfg.student_lr));
  }
  CHECK(parameter_hash(teacher.net) == t0);
}

TEST_CASE("run_dhbe: k student updates per outer iteration") {
  ModelBundle teacher = tiny_teacher(25);
  DistillConfig cfg = tiny_config(1, 2);
  cfg.k = 3;
  DistillEngine eng(teacher, cfg, 25);
  for (int it = 0; it < 2; ++it) {
    for (int j = 0; j < cfg.k; ++j) eng.student_step(eng.draw_batch());
    eng.generator_step(eng.draw_batch());
    eng.trigger_generator_step(eng.draw_batch());
  }
  CHECK(eng.student_steps() == 6);
  CHECK(eng.generator_steps() == 2);
  CHECK(eng.trigger_generator_steps() == 2);
}

TEST_CASE("learning rates decay together") {
  ModelBundle teacher = tiny_teacher(26);
  DistillConfig cfg = tiny_config(3, 1);
  cfg.lr_decay_epochs = {1, 2};
  auto result = run_dhbe(teacher, cfg, 26);
  REQUIRE(result.history.size() == 3);
  CHECK(result.history[0].student_lr == doctest::Approx(cfg.student_lr));
  CHECK(result.history[1].student_lr == doctest::Approx(cfg.student_lr * 0.1));
  CHECK(result.history[2].student_lr == doctest::Approx(cfg.student_lr * 0.01));
}

TEST_CASE("trigger generator output still honors the bound after updates") {
  ModelBundle teacher = tiny_teacher(27);
  DistillConfig cfg = tiny_config(1, 3);
  DistillEngine eng(teacher, cfg, 27);
  for (int i = 0; i < 3; ++i) {
    eng.student_step(eng.draw_batch());
    eng.generator_step(eng.draw_batch());
    eng.trigger_generator_step(eng.draw_batch());
  }
  NoGradGuard ng;
  RngStream zr(99);
  Tensor z = sample_latent(64, cfg.latent_dim, zr);
  Tensor p = eng.trigger_generator().generate(z, Mode::kTrain);
  const double bound = eng.trigger_generator().l1_bound();
  for (int i = 0; i < 64; ++i) {
    double l1 = 0.0;
    const int64_t sz = p.size() / 64;
    for (int64_t j = 0; j < sz; ++j) l1 += std::fabs(static_cast<double>(p[i * sz + j]));
    CHECK(l1 <= bound);
  }
}

TEST_CASE("config validation") {
  DistillConfig c;
  c.lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig{};
  c.lr_decay_epochs = {200, 100};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig{};
  c.trigger_scale = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DistillConfig{};
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("loss history csv layout") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dhbe_hist";
  fs::create_directories(dir);
  std::vector<LossRecord> hist = {{0, 0, 1.5, 0.25, -1.5, -0.25, 0.1},
                                  {0, 1, 1.25, 0.5, -1.0, -0.5, 0.1}};
  const std::string path = (dir / "losses.csv").string();
  write_loss_history_csv(hist, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,iteration,D,R,L_g,L_gp,student_lr");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fs::remove_all(dir);
}
