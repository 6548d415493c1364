#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "dhbe/attacks.hpp"
#include "dhbe/metrics.hpp"
#include "dhbe/train.hpp"

using namespace dhbe;

namespace {
TrainSchedule tiny_schedule(int epochs) {
  TrainSchedule s;
  s.epochs = epochs;
  s.batch_size = 64;
  s.lr = 0.05;
  s.decay_epochs = {};
  s.crop_pad = 2;
  return s;
}
}  // namespace

TEST_CASE("apply_trigger: zero pattern is identity") {
  RngStream rng(1);
  Tensor x({8, 8, 3});
  rng.fill_uniform(x, 0.0f, 1.0f);
  TriggerSpec t;
  t.pattern = Tensor({3, 3, 3});
  t.target_class = 0;
  Tensor y = apply_trigger(x, t, {2, 2}, true);
  CHECK(bit_equal(x, y));
}

TEST_CASE("apply_trigger: 1x1 on zero image") {
  Tensor x({2, 2, 1});
  TriggerSpec t;
  t.pattern = Tensor::full({1, 1, 1}, 0.5f);
  Tensor y = apply_trigger(x, t, {0, 0}, true);
  // brute-force elementwise comparison
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(y.at(r, c, 0) == (r == 0 && c == 0 ? 0.5f : 0.0f));
}

TEST_CASE("apply_trigger: all-ones 3x3x3 has l1 change 27") {
  RngStream rng(2);
  Tensor x({8, 8, 3});
  rng.fill_uniform(x, 0.0f, 0.5f);
  TriggerSpec t;
  t.pattern = Tensor::full({3, 3, 3}, 1.0f);
  Tensor y = apply_trigger(x, t, {1, 1}, /*clamp=*/false);
  double l1 = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) l1 += std::fabs(y[i] - x[i]);
  CHECK(l1 == doctest::Approx(27.0).epsilon(1e-5));
}

TEST_CASE("apply_trigger: stamp locality") {
  RngStream rng(3);
  Tensor x({10, 12, 3});
  rng.fill_uniform(x, 0.0f, 1.0f);
  TriggerSpec t = checkerboard_trigger(3, 4, 3, 0);
  Tensor y = apply_trigger(x, t, {5, 6}, true);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 12; ++c) {
      const bool inside = r >= 5 && r < 8 && c >= 6 && c < 10;
      if (!inside)
        for (int k = 0; k < 3; ++k) CHECK(y.at(r, c, k) == x.at(r, c, k));
    }
}

TEST_CASE("apply_trigger: l1 budget exact on zero background") {
  RngStream rng(4);
  TriggerSpec t;
  t.pattern = Tensor::uninit({4, 4, 3});
  rng.fill_uniform(t.pattern, -1.0f, 1.0f);
  Tensor x({9, 9, 3});
  Tensor y = apply_trigger(x, t, {3, 3}, /*clamp=*/false);
  double l1_diff = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) l1_diff += std::fabs(y[i] - x[i]);
  CHECK(l1_diff == l1_norm(t.pattern));
}

TEST_CASE("apply_trigger: out of bounds placement") {
  Tensor x({4, 4, 1});
  TriggerSpec t;
  t.pattern = Tensor({3, 3, 1});
  CHECK_THROWS_AS(apply_trigger(x, t, {2, 2}, true), ContractError);
  CHECK_THROWS_AS(apply_trigger(x, t, {-1, 0}, true), ContractError);
}

TEST_CASE("amplify_trigger: k=1 equals bottom-right stamp") {
  RngStream rng(5);
  Tensor x({16, 16, 3});
  rng.fill_uniform(x, 0.0f, 1.0f);
  TriggerSpec t = checkerboard_trigger(3, 3, 3, 0);
  Tensor a = amplify_trigger(x, t, 1, true);
  Tensor b = apply_trigger(x, t, {13, 13}, true);
  CHECK(bit_equal(a, b));
}

TEST_CASE("amplify_trigger: k=4 on 32x32 changes exactly 36 pixel positions") {
  Tensor x({32, 32, 3});
  TriggerSpec t = checkerboard_trigger(3, 3, 3, 0);
  Tensor y = amplify_trigger(x, t, 4, /*clamp=*/false);
  int changed = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      bool diff = false;
      for (int k = 0; k < 3; ++k) diff |= y.at(r, c, k) != x.at(r, c, k);
      changed += diff;
    }
  CHECK(changed == 36);
}

TEST_CASE("amplify_trigger: k=9 placements are corners, edge midpoints and center") {
  const auto pos = amplify_positions(32, 32, 3, 3, 9);
  REQUIRE(pos.size() == 9);
  const std::vector<std::pair<int, int>> expect = {{0, 0},  {0, 14},  {0, 29},
                                                   {14, 0}, {14, 14}, {14, 29},
                                                   {29, 0}, {29, 14}, {29, 29}};
  for (const auto& e : expect)
    CHECK(std::find(pos.begin(), pos.end(), e) != pos.end());
}

TEST_CASE("amplify_trigger: overlap and bad k rejected") {
  Tensor x({6, 6, 1});
  TriggerSpec t;
  t.pattern = Tensor({4, 4, 1});
  CHECK_THROWS_AS(amplify_trigger(x, t, 4, true), ContractError);
  TriggerSpec t2;
  t2.pattern = Tensor({1, 1, 1});
  CHECK_THROWS_AS(amplify_trigger(x, t2, 2, true), ContractError);
  // 9 non-overlapping 3x3 stamps do not fit an 8x8 image
  Tensor x8({8, 8, 1});
  TriggerSpec t3;
  t3.pattern = Tensor({3, 3, 1});
  CHECK_THROWS_AS(amplify_trigger(x8, t3, 9, true), ContractError);
}

TEST_CASE("poison_badnets: n=0 leaves the dataset untouched") {
  ToySpec spec;
  spec.train_n = 20;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 7);
  TriggerSpec t = checkerboard_trigger(3, 3, 3, 1);
  RngStream rng(1);
  auto [out, rec] = poison_badnets(ds, t, 0, rng);
  CHECK(bit_equal(out.images, ds.images));
  CHECK(out.labels == ds.labels);
  CHECK(rec.poisoned_indices.empty());
  CHECK(rec.n_poison == 0);
}

TEST_CASE("poison_badnets: exact accounting on a small set") {
  ToySpec spec;
  spec.train_n = 16;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 8);
  TriggerSpec t = checkerboard_trigger(2, 2, 3, 1);
  RngStream rng(2);
  auto [out, rec] = poison_badnets(ds, t, 3, rng);
  REQUIRE(rec.poisoned_indices.size() == 3);
  // brute-force diff of the datasets
  int changed_imgs = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const bool img_diff = !bit_equal(out.image(i), ds.image(i));
    changed_imgs += img_diff;
    if (img_diff) {
      // poisoned samples came from the non-target class and now carry t
      CHECK(ds.labels[static_cast<size_t>(i)] != 1);
      CHECK(out.labels[static_cast<size_t>(i)] == 1);
      CHECK(std::find(rec.poisoned_indices.begin(), rec.poisoned_indices.end(), i) !=
            rec.poisoned_indices.end());
    } else {
      CHECK(out.labels[static_cast<size_t>(i)] == ds.labels[static_cast<size_t>(i)]);
    }
  }
  CHECK(changed_imgs == 3);
}

TEST_CASE("poison_badnets: insufficient eligible samples") {
  ToySpec spec;
  spec.train_n = 10;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 9);
  TriggerSpec t = checkerboard_trigger(2, 2, 3, 1);
  RngStream rng(3);
  CHECK_THROWS_AS(poison_badnets(ds, t, ds.size(), rng), TrainingError);
}

TEST_CASE("poison_clean_label: zero budget + zero trigger is identity") {
  ToySpec spec;
  spec.train_n = 16;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 10);
  RngStream init(4);
  ModelBundle model = build_classifier(ArchId::kToyCnn, 2, ds.norm, init, {12, 12, 3});
  TriggerSpec t;
  t.pattern = Tensor({2, 2, 3});
  t.target_class = 1;
  CleanLabelOptions opt;
  opt.perturb_budget = 0.0;
  RngStream rng(5);
  auto [out, rec] = poison_clean_label(ds, t, 3, opt, model, rng);
  CHECK(bit_equal(out.images, ds.images));
  CHECK(out.labels == ds.labels);
}

TEST_CASE("poison_clean_label: labels unchanged, perturbation bounded") {
  ToySpec spec;
  spec.train_n = 24;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 11);
  RngStream init(6);
  ModelBundle model = build_classifier(ArchId::kToyCnn, 2, ds.norm, init, {12, 12, 3});
  TriggerSpec t = checkerboard_trigger(2, 2, 3, 1);
  CleanLabelOptions opt;  // default budget 8/255
  RngStream rng(7);
  auto [out, rec] = poison_clean_label(ds, t, 4, opt, model, rng);
  CHECK(out.labels == ds.labels);
  REQUIRE(rec.poisoned_indices.size() == 4);
  for (int idx : rec.poisoned_indices) {
    CHECK(ds.labels[static_cast<size_t>(idx)] == 1);  // target class only
    Tensor a = ds.image(idx), b = out.image(idx);
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) {
        if (r >= 10 && c >= 10) continue;  // trigger footprint
        for (int k = 0; k < 3; ++k)
          CHECK(std::fabs(b.at(r, c, k) - a.at(r, c, k)) <= opt.perturb_budget + 1e-5);
      }
  }
  bool moved = false;
  for (int idx : rec.poisoned_indices) moved |= !bit_equal(ds.image(idx), out.image(idx));
  CHECK(moved);
}

TEST_CASE("trojaning: zero finetune leaves parameters unchanged, trigger activates neurons") {
  ToySpec spec;
  spec.train_n = 300;
  spec.test_n = 100;
  LabeledDataset train = make_toy_dataset(spec, Split::kTrain, 12);
  RngStream rt = derive_stream(12, "train");
  ModelBundle model = train_classifier(train, ArchId::kToyCnn, tiny_schedule(4), rt);

  TrojanOptions opt;
  opt.n_neurons = 10;
  opt.trigger_h = opt.trigger_w = 3;
  opt.ascent_steps = 120;
  RngStream rng(13);
  const uint64_t before = parameter_hash(model.net);
  auto [trojaned, trigger] = trojaning_attack(model, train, 1, 0, opt, rng);
  CHECK(parameter_hash(model.net) == before);
  CHECK(parameter_hash(trojaned.net) == before);  // no finetune -> identical weights
  CHECK(trigger.pattern.dim(0) == 3);

  // trigger raises mean pooled activation on random probes
  RngStream rp(14);
  Tensor probes({32, 12, 12, 3});
  rp.fill_uniform(probes, 0.0f, 1.0f);
  Tensor stamped = probes;
  const int64_t img_sz = 12 * 12 * 3;
  for (int i = 0; i < 32; ++i) {
    Tensor img = Tensor::uninit({12, 12, 3});
    std::memcpy(img.data(), probes.data() + i * img_sz, sizeof(float) * img_sz);
    Tensor st = apply_trigger(img, trigger, {9, 9}, true);
    std::memcpy(stamped.data() + i * img_sz, st.data(), sizeof(float) * img_sz);
  }
  std::vector<int> all_units(128);
  for (int i = 0; i < 128; ++i) all_units[static_cast<size_t>(i)] = i;
  const double act_clean = mean_selected_activation(trojaned, probes, all_units);
  const double act_stamped = mean_selected_activation(trojaned, stamped, all_units);
  CHECK(act_stamped > act_clean);
}

TEST_CASE("trojaning: finetune changes only the linear head and implants a backdoor") {
  ToySpec spec;
  spec.train_n = 400;
  spec.test_n = 200;
  LabeledDataset train = make_toy_dataset(spec, Split::kTrain, 15);
  LabeledDataset test = make_toy_dataset(spec, Split::kTest, 15);
  RngStream rt = derive_stream(15, "train");
  ModelBundle model = train_classifier(train, ArchId::kToyCnn, tiny_schedule(6), rt);

  TrojanOptions opt;
  opt.n_neurons = 10;
  opt.trigger_h = opt.trigger_w = 3;
  opt.ascent_steps = 150;
  RngStream rng(16);
  auto [trojaned, trigger] = trojaning_attack(model, train, 1, 80, opt, rng);

  auto pa = model.net.parameters();
  auto pb = trojaned.net.parameters();
  REQUIRE(pa.size() == pb.size());
  bool head_moved = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    const bool same = bit_equal(pa[i]->value, pb[i]->value);
    if (pa[i]->name.rfind("fc.", 0) == 0)
      head_moved |= !same;
    else
      CHECK(same);
  }
  CHECK(head_moved);
  const double asr = attack_success_rate(trojaned, test, trigger, 1).asr;
  CHECK(asr >= 0.2);
}

TEST_CASE("train_classifier: zero epochs returns the initialized model") {
  ToySpec spec;
  spec.train_n = 32;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 17);
  RngStream r1 = derive_stream(17, "t");
  ModelBundle a = train_classifier(ds, ArchId::kToyCnn, tiny_schedule(0), r1);
  RngStream r2 = derive_stream(17, "t");
  ModelBundle b = build_classifier(ArchId::kToyCnn, 2, ds.norm, r2, {12, 12, 3});
  CHECK(parameter_hash(a.net) == parameter_hash(b.net));
}

TEST_CASE("train_classifier: separable synthetic data reaches 99% train accuracy") {
  ToySpec spec;
  spec.train_n = 600;
  spec.pos_sigma = 0.05;
  spec.ambiguous_frac = 0.0;
  spec.tint_wash = 0.2;
  LabeledDataset ds = make_toy_dataset(spec, Split::kTrain, 18);
  RngStream rng = derive_stream(18, "t");
  TrainSchedule s = tiny_schedule(5);
  s.augment = false;
  ModelBundle m = train_classifier(ds, ArchId::kToyCnn, s, rng);
  CHECK(accuracy(m, ds) >= 0.99);
}

TEST_CASE("amplification monotonicity on a backdoored model") {
  ToySpec spec;
  spec.train_n = 1500;
  spec.test_n = 400;
  spec.height = spec.width = 16;
  LabeledDataset train = make_toy_dataset(spec, Split::kTrain, 19);
  LabeledDataset test = make_toy_dataset(spec, Split::kTest, 19);
  TriggerSpec t = checkerboard_trigger(3, 3, 3, 1);
  RngStream rp = derive_stream(19, "poison");
  auto [poisoned, rec] = poison_badnets(train, t, 15, rp);
  RngStream rt = derive_stream(19, "train");
  ModelBundle m = train_classifier(poisoned, ArchId::kToyCnn, tiny_schedule(10), rt);
  const double a1 = attack_success_rate(m, test, t, 1).asr;
  const double a4 = attack_success_rate(m, test, t, 4).asr;
  const double a9 = attack_success_rate(m, test, t, 9).asr;
  CHECK(a4 >= a1 - 0.02);
  CHECK(a9 >= a4 - 0.02);
}

TEST_CASE("trigger file round-trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dhbe_trigger_test";
  fs::create_directories(dir);
  TriggerSpec t = checkerboard_trigger(3, 3, 3, 1, "cb3");
  t.placement = Placement::kFixed;
  t.fixed_row = 2;
  t.fixed_col = 5;
  save_trigger(t, (dir / "t.json").string());
  TriggerSpec u = load_trigger((dir / "t.json").string());
  CHECK(u.name == "cb3");
  CHECK(u.target_class == 1);
  CHECK(u.placement == Placement::kFixed);
  CHECK(u.fixed_row == 2);
  CHECK(bit_equal(u.pattern, t.pattern));
  fs::remove_all(dir);
}
