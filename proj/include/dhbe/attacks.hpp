#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dhbe/data.hpp"
#include "dhbe/zoo.hpp"

namespace dhbe {

enum class Placement { kBottomRight, kFixed, kRandom };

// A patch backdoor: an additive pixel-delta pattern (values in [-1, 1], raw
// pixel units), a placement policy and the target class it redirects to.
struct TriggerSpec {
  Tensor pattern;  // (h, w, C)
  Placement placement = Placement::kBottomRight;
  int fixed_row = 0, fixed_col = 0;
  int target_class = 0;
  std::string name;

  int h() const { return pattern.dim(0); }
  int w() const { return pattern.dim(1); }
  int channels() const { return pattern.dim(2); }
};

// Default Badnets pattern: a full-contrast +/-1 checkerboard.
TriggerSpec checkerboard_trigger(int h, int w, int channels, int target_class,
                                 std::string name = "checkerboard");

void save_trigger(const TriggerSpec& trigger, const std::string& path);
TriggerSpec load_trigger(const std::string& path);

enum class AttackKind { kBadnets, kCleanLabel, kTrojaning };
std::string attack_kind_name(AttackKind k);

struct PoisonRecord {
  std::vector<int> poisoned_indices;
  AttackKind attack_kind = AttackKind::kBadnets;
  std::string trigger_name;
  int n_poison = 0;
  uint64_t seed = 0;
};

void save_poison_record(const PoisonRecord& rec, const std::string& path);

// Resolves where a trigger lands on an (H, W) image. Random placement draws
// uniformly over all fully-in-bounds positions.
std::pair<int, int> resolve_placement(const TriggerSpec& trigger, int img_h, int img_w,
                                      RngStream* rng);

// Adds the zero-padded pattern at (row, col) in raw pixel space; pixels
// outside the patch footprint are bit-identical to x.
Tensor apply_trigger(const Tensor& x, const TriggerSpec& trigger, std::pair<int, int> position,
                     bool clamp);

// The k placements used by amplified attacks: bottom-right (k=1), the four
// corners (k=4), corners + edge midpoints + center (k=9). Throws on overlap
// or out-of-bounds.
std::vector<std::pair<int, int>> amplify_positions(int img_h, int img_w, int patch_h,
                                                   int patch_w, int k);
Tensor amplify_trigger(const Tensor& x, const TriggerSpec& trigger, int k, bool clamp);

// --------------------------------------------------------------------------
// Poisoning attacks

// Stamps and relabels n_poison non-target-class samples.
std::pair<LabeledDataset, PoisonRecord> poison_badnets(const LabeledDataset& ds,
                                                       const TriggerSpec& trigger, int n_poison,
                                                       RngStream& rng);

// Perturbs n_poison target-class samples with a bounded adversarial
// perturbation from the clean model, then stamps the trigger; labels stay.
struct CleanLabelOptions {
  double perturb_budget = 8.0 / 255.0;  // l_inf, raw pixel units
  int pgd_steps = 10;
};
std::pair<LabeledDataset, PoisonRecord> poison_clean_label(const LabeledDataset& ds,
                                                           const TriggerSpec& trigger,
                                                           int n_poison,
                                                           const CleanLabelOptions& opt,
                                                           ModelBundle& clean_model,
                                                           RngStream& rng);

// Neuron-hijacking: picks avg-pool units, synthesizes a patch maximizing
// them, then retrains only the final linear layer on a partially poisoned
// set. Returns the modified model and the synthesized trigger.
struct TrojanOptions {
  int n_neurons = 10;
  int trigger_h = 3, trigger_w = 3;
  int ascent_steps = 500;
  double ascent_step_size = 0.1;
  int probe_batch = 16;
  int finetune_epochs = 10;
  double finetune_lr = 0.01;
  int finetune_batch = 128;
};
std::pair<ModelBundle, TriggerSpec> trojaning_attack(ModelBundle& model,
                                                     const LabeledDataset& train_set,
                                                     int target_class, int n_finetune_samples,
                                                     const TrojanOptions& opt, RngStream& rng);

// Mean activation of the given pooled units over a raw image batch.
double mean_selected_activation(ModelBundle& model, const Tensor& raw_images,
                                const std::vector<int>& units);

}  // namespace dhbe
