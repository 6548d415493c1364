#include "dhbe/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dhbe/losses.hpp"
#include "dhbe/optim.hpp"
#include "dhbe/train.hpp"

namespace dhbe {

using nlohmann::json;

std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::kBadnets: return "badnets";
    case AttackKind::kCleanLabel: return "clean-label";
    case AttackKind::kTrojaning: return "trojaning";
  }
  throw ConfigError("bad attack kind");
}

TriggerSpec checkerboard_trigger(int h, int w, int channels, int target_class,
                                 std::string name) {
  TriggerSpec t;
  t.pattern = Tensor({h, w, channels});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        t.pattern.at(y, x, c) = ((y + x) % 2 == 0) ? 1.0f : -1.0f;
  t.placement = Placement::kBottomRight;
  t.target_class = target_class;
  t.name = std::move(name);
  return t;
}

namespace {
std::string placement_name(Placement p) {
  switch (p) {
    case Placement::kBottomRight: return "bottom-right";
    case Placement::kFixed: return "fixed";
    case Placement::kRandom: return "random";
  }
  throw ConfigError("bad placement");
}
Placement parse_placement(const std::string& s) {
  if (s == "bottom-right") return Placement::kBottomRight;
  if (s == "fixed") return Placement::kFixed;
  if (s == "random") return Placement::kRandom;
  throw ConfigError("unknown placement: " + s);
}
}  // namespace

void save_trigger(const TriggerSpec& trigger, const std::string& path) {
  json j;
  j["name"] = trigger.name;
  j["target_class"] = trigger.target_class;
  j["placement"] = placement_name(trigger.placement);
  j["fixed_row"] = trigger.fixed_row;
  j["fixed_col"] = trigger.fixed_col;
  j["scale"] = 1.0;
  j["shape"] = {trigger.h(), trigger.w(), trigger.channels()};
  std::vector<float> flat(trigger.pattern.data(),
                          trigger.pattern.data() + trigger.pattern.size());
  j["pattern"] = flat;
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write trigger file: " + path);
  os << j.dump(2) << "\n";
}

TriggerSpec load_trigger(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open trigger file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IngestionError("bad trigger file " + path + ": " + e.what());
  }
  TriggerSpec t;
  t.name = j.at("name").get<std::string>();
  t.target_class = j.at("target_class").get<int>();
  t.placement = parse_placement(j.at("placement").get<std::string>());
  t.fixed_row = j.value("fixed_row", 0);
  t.fixed_col = j.value("fixed_col", 0);
  const auto shape = j.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw IngestionError("trigger shape must be h,w,c");
  auto flat = j.at("pattern").get<std::vector<float>>();
  t.pattern = Tensor({shape[0], shape[1], shape[2]}, std::move(flat));
  const double scale = j.value("scale", 1.0);
  if (scale != 1.0) scale_inplace(t.pattern, static_cast<float>(scale));
  return t;
}

void save_poison_record(const PoisonRecord& rec, const std::string& path) {
  json j;
  j["attack_kind"] = attack_kind_name(rec.attack_kind);
  j["trigger_name"] = rec.trigger_name;
  j["n_poison"] = rec.n_poison;
  j["seed"] = rec.seed;
  j["poisoned_indices"] = rec.poisoned_indices;
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write poison record: " + path);
  os << j.dump(2) << "\n";
}

std::pair<int, int> resolve_placement(const TriggerSpec& trigger, int img_h, int img_w,
                                      RngStream* rng) {
  const int h = trigger.h(), w = trigger.w();
  switch (trigger.placement) {
    case Placement::kBottomRight:
      return {img_h - h, img_w - w};
    case Placement::kFixed:
      return {trigger.fixed_row, trigger.fixed_col};
    case Placement::kRandom: {
      if (!rng) throw ContractError("random placement needs an rng stream");
      return {rng->uniform_int(img_h - h + 1), rng->uniform_int(img_w - w + 1)};
    }
  }
  throw ConfigError("bad placement");
}

Tensor apply_trigger(const Tensor& x, const TriggerSpec& trigger, std::pair<int, int> position,
                     bool clamp) {
  if (x.ndim() != 3) throw ContractError("apply_trigger expects a single (H,W,C) image");
  const int img_h = x.dim(0), img_w = x.dim(1), c = x.dim(2);
  const int h = trigger.h(), w = trigger.w();
  if (trigger.channels() != c) throw ContractError("trigger channel mismatch");
  const auto [row, col] = position;
  if (row < 0 || col < 0 || row + h > img_h || col + w > img_w)
    throw ContractError("trigger placement out of bounds");
  Tensor out = x;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int k = 0; k < c; ++k) {
        float v = out.at(row + y, col + xx, k) + trigger.pattern.at(y, xx, k);
        if (clamp) v = std::min(1.0f, std::max(0.0f, v));
        out.at(row + y, col + xx, k) = v;
      }
  return out;
}

std::vector<std::pair<int, int>> amplify_positions(int img_h, int img_w, int patch_h,
                                                   int patch_w, int k) {
  if (k != 1 && k != 4 && k != 9) throw ContractError("amplification must be 1, 4 or 9");
  if (patch_h > img_h || patch_w > img_w)
    throw ContractError("trigger placement out of bounds");
  const int bottom = img_h - patch_h, right = img_w - patch_w;
  std::vector<std::pair<int, int>> pos;
  if (k == 1) {
    pos = {{bottom, right}};
  } else if (k == 4) {
    pos = {{0, 0}, {0, right}, {bottom, 0}, {bottom, right}};
  } else {
    const int midr = bottom / 2, midc = right / 2;
    for (int r : {0, midr, bottom})
      for (int c : {0, midc, right}) pos.emplace_back(r, c);
  }
  for (size_t i = 0; i < pos.size(); ++i)
    for (size_t j = i + 1; j < pos.size(); ++j) {
      const bool overlap_r = std::abs(pos[i].first - pos[j].first) < patch_h;
      const bool overlap_c = std::abs(pos[i].second - pos[j].second) < patch_w;
      if (overlap_r && overlap_c)
        throw ContractError("amplified trigger placements overlap on this image size");
    }
  return pos;
}

Tensor amplify_trigger(const Tensor& x, const TriggerSpec& trigger, int k, bool clamp) {
  const auto positions =
      amplify_positions(x.dim(0), x.dim(1), trigger.h(), trigger.w(), k);
  Tensor out = x;
  for (const auto& p : positions) out = apply_trigger(out, trigger, p, clamp);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset poisoning

std::pair<LabeledDataset, PoisonRecord> poison_badnets(const LabeledDataset& ds,
                                                       const TriggerSpec& trigger, int n_poison,
                                                       RngStream& rng) {
  if (n_poison < 0) throw ContractError("n_poison must be >= 0");
  PoisonRecord rec;
  rec.attack_kind = AttackKind::kBadnets;
  rec.trigger_name = trigger.name;
  rec.n_poison = n_poison;
  LabeledDataset out = ds;
  if (n_poison == 0) return {std::move(out), std::move(rec)};

  std::vector<int> eligible;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[static_cast<size_t>(i)] != trigger.target_class) eligible.push_back(i);
  if (static_cast<int>(eligible.size()) < n_poison)
    throw TrainingError("not enough non-target-class samples to poison");

  for (int j = 0; j < n_poison; ++j) {
    const int pick = j + rng.uniform_int(static_cast<int>(eligible.size()) - j);
    std::swap(eligible[static_cast<size_t>(j)], eligible[static_cast<size_t>(pick)]);
  }
  rec.poisoned_indices.assign(eligible.begin(), eligible.begin() + n_poison);
  std::sort(rec.poisoned_indices.begin(), rec.poisoned_indices.end());

  for (int idx : rec.poisoned_indices) {
    const auto pos = resolve_placement(trigger, ds.height(), ds.width(), &rng);
    out.set_image(idx, apply_trigger(ds.image(idx), trigger, pos, /*clamp=*/true));
    out.labels[static_cast<size_t>(idx)] = trigger.target_class;
  }
  return {std::move(out), std::move(rec)};
}

std::pair<LabeledDataset, PoisonRecord> poison_clean_label(const LabeledDataset& ds,
                                                           const TriggerSpec& trigger,
                                                           int n_poison,
                                                           const CleanLabelOptions& opt,
                                                           ModelBundle& clean_model,
                                                           RngStream& rng) {
  if (n_poison < 0) throw ContractError("n_poison must be >= 0");
  PoisonRecord rec;
  rec.attack_kind = AttackKind::kCleanLabel;
  rec.trigger_name = trigger.name;
  rec.n_poison = n_poison;
  LabeledDataset out = ds;
  if (n_poison == 0) return {std::move(out), std::move(rec)};

  std::vector<int> eligible;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[static_cast<size_t>(i)] == trigger.target_class) eligible.push_back(i);
  if (static_cast<int>(eligible.size()) < n_poison)
    throw TrainingError("not enough target-class samples to poison");

  for (int j = 0; j < n_poison; ++j) {
    const int pick = j + rng.uniform_int(static_cast<int>(eligible.size()) - j);
    std::swap(eligible[static_cast<size_t>(j)], eligible[static_cast<size_t>(pick)]);
  }
  rec.poisoned_indices.assign(eligible.begin(), eligible.begin() + n_poison);
  std::sort(rec.poisoned_indices.begin(), rec.poisoned_indices.end());

  const int h = ds.height(), w = ds.width(), c = ds.channels();
  const float eps = static_cast<float>(opt.perturb_budget);
  const float step = eps / 4.0f;
  for (int idx : rec.poisoned_indices) {
    Tensor img = ds.image(idx);
    const std::vector<int> label = {ds.labels[static_cast<size_t>(idx)]};
    if (eps > 0.0f) {
      // Iterative gradient-sign ascent on the clean model's loss corrupts the
      // salient object feature within the l_inf budget.
      Tensor adv = img;
      for (int it = 0; it < opt.pgd_steps; ++it) {
        Tensor batch = adv.reshaped({1, h, w, c});
        Tensor x = normalize_batch(batch, clean_model.norm);
        Tensor logits = clean_model.net.forward(x, Mode::kEval);
        Tensor grad;
        softmax_cross_entropy(logits, label, &grad);
        Tensor gx = clean_model.net.backward(grad);
        for (Parameter* p : clean_model.net.parameters()) p->zero_grad();
        for (int64_t j = 0; j < adv.size(); ++j) {
          // chain through normalization: d/d_raw = d/d_norm / std
          const float g = gx[j] / clean_model.norm.std[static_cast<size_t>(j % c)];
          float v = adv[j] + step * (g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f));
          v = std::min(img[j] + eps, std::max(img[j] - eps, v));
          adv[j] = std::min(1.0f, std::max(0.0f, v));
        }
      }
      img = adv;
    }
    const auto pos = resolve_placement(trigger, h, w, &rng);
    out.set_image(idx, apply_trigger(img, trigger, pos, /*clamp=*/true));
  }
  return {std::move(out), std::move(rec)};
}

// ---------------------------------------------------------------------------
// Trojaning

double mean_selected_activation(ModelBundle& model, const Tensor& raw_images,
                                const std::vector<int>& units) {
  NoGradGuard ng;
  Tensor x = normalize_batch(raw_images, model.norm);
  Tensor pooled = model.net.forward_prefix(x, model.pool_tap, Mode::kEval);
  double s = 0.0;
  for (int i = 0; i < pooled.dim(0); ++i)
    for (int u : units) s += pooled.at(i, u);
  return s / (pooled.dim(0) * static_cast<double>(units.size()));
}

std::pair<ModelBundle, TriggerSpec> trojaning_attack(ModelBundle& model,
                                                     const LabeledDataset& train_set,
                                                     int target_class, int n_finetune_samples,
                                                     const TrojanOptions& opt, RngStream& rng) {
  ModelBundle out = clone_bundle(model);
  const int h = train_set.height(), w = train_set.width(), c = train_set.channels();
  auto& head = static_cast<Dense&>(out.net.layer(out.fc_layer_index));
  const int feat_dim = head.weight.value.dim(0);
  if (opt.n_neurons > feat_dim)
    throw ConfigError("n_neurons exceeds pooled feature width");

  // (1) random subset of avg-pool units
  std::vector<int> all(static_cast<size_t>(feat_dim));
  for (int i = 0; i < feat_dim; ++i) all[static_cast<size_t>(i)] = i;
  for (int j = 0; j < opt.n_neurons; ++j) {
    const int pick = j + rng.uniform_int(feat_dim - j);
    std::swap(all[static_cast<size_t>(j)], all[static_cast<size_t>(pick)]);
  }
  std::vector<int> units(all.begin(), all.begin() + opt.n_neurons);
  std::sort(units.begin(), units.end());

  // (2) reverse-engineer a patch maximizing their mean activation
  const int ph = opt.trigger_h, pw = opt.trigger_w;
  const int b = opt.probe_batch;
  Tensor probes({b, h, w, c});
  rng.fill_uniform(probes, 0.0f, 1.0f);
  Tensor patch({ph, pw, c});  // starts at zero
  const int row = h - ph, col = w - pw;

  for (int it = 0; it < opt.ascent_steps; ++it) {
    Tensor stamped = probes;
    for (int i = 0; i < b; ++i)
      for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx)
          for (int k = 0; k < c; ++k) {
            float& v = stamped[(((static_cast<int64_t>(i) * h) + row + y) * w + col + xx) * c + k];
            v = std::min(1.0f, std::max(0.0f, v + patch.at(y, xx, k)));
          }
    Tensor x = normalize_batch(stamped, out.norm);
    Tensor pooled = out.net.forward_prefix(x, out.pool_tap, Mode::kEval);
    if (!all_finite(pooled)) throw TrainingError("trigger optimization diverged");
    Tensor gpool(pooled.shape());
    const float gval = 1.0f / static_cast<float>(b * static_cast<int>(units.size()));
    for (int i = 0; i < b; ++i)
      for (int u : units) gpool.at(i, u) = gval;
    Tensor gx = out.net.backward_prefix(gpool, out.pool_tap);
    for (Parameter* p : out.net.parameters()) p->zero_grad();

    // accumulate patch gradient over the batch, chain through normalization
    Tensor gpatch({ph, pw, c});
    for (int i = 0; i < b; ++i)
      for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx)
          for (int k = 0; k < c; ++k)
            gpatch.at(y, xx, k) +=
                gx[(((static_cast<int64_t>(i) * h) + row + y) * w + col + xx) * c + k] /
                out.norm.std[static_cast<size_t>(k)];
    const double gmax = linf_norm(gpatch);
    if (gmax == 0.0) break;
    for (int64_t j = 0; j < patch.size(); ++j) {
      const float v = patch[j] + static_cast<float>(opt.ascent_step_size) *
                                     gpatch[j] / static_cast<float>(gmax);
      patch[j] = std::min(1.0f, std::max(-1.0f, v));
    }
  }

  TriggerSpec trigger;
  trigger.pattern = patch;
  trigger.placement = Placement::kBottomRight;
  trigger.target_class = target_class;
  trigger.name = "trojan-" + std::to_string(ph) + "x" + std::to_string(pw);

  // (3) finetune only the final linear layer on a partially poisoned set
  if (n_finetune_samples > 0) {
    auto [poisoned, rec] = poison_badnets(train_set, trigger, n_finetune_samples, rng);
    rec.attack_kind = AttackKind::kTrojaning;
    Dense& fc = head;
    Sgd opt_fc({&fc.weight, &fc.bias}, opt.finetune_lr, 0.9, 0.0);
    const int n = poisoned.size();
    const int bs = std::min(opt.finetune_batch, n);
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int epoch = 0; epoch < opt.finetune_epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.uniform_int(i + 1))]);
      for (int start = 0; start + bs <= n; start += bs) {
        Tensor batch({bs, h, w, c});
        std::vector<int> labels(static_cast<size_t>(bs));
        for (int j = 0; j < bs; ++j) {
          const int idx = order[static_cast<size_t>(start + j)];
          std::memcpy(batch.data() + static_cast<int64_t>(j) * h * w * c,
                      poisoned.image(idx).data(),
                      sizeof(float) * static_cast<size_t>(h) * w * c);
          labels[static_cast<size_t>(j)] = poisoned.labels[static_cast<size_t>(idx)];
        }
        Tensor pooled;
        {
          NoGradGuard ng;
          pooled = out.net.forward_prefix(normalize_batch(batch, out.norm), out.pool_tap,
                                          Mode::kEval);
        }
        Tensor logits = fc.forward(pooled, Mode::kTrain);
        Tensor grad;
        const double loss = softmax_cross_entropy(logits, labels, &grad);
        if (!std::isfinite(loss)) throw TrainingError("trojan finetune diverged");
        fc.backward(grad);
        opt_fc.step();
        opt_fc.zero_grad();
      }
    }
  }
  return {std::move(out), std::move(trigger)};
}

}  // namespace dhbe
