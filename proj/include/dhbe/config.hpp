#pragma once

#include <optional>
#include <string>

#include "dhbe/attacks.hpp"
#include "dhbe/baseline.hpp"
#include "dhbe/data.hpp"
#include "dhbe/distill.hpp"
#include "dhbe/train.hpp"

namespace dhbe {

struct TriggerConfig {
  int height = 3, width = 3;
  std::string pattern = "checkerboard";  // checkerboard | solid | file
  double solid_value = 1.0;
  std::string file;  // when pattern == "file"
  std::string placement = "bottom-right";
  int fixed_row = 0, fixed_col = 0;
  std::string name = "checkerboard";
};

struct AttackConfig {
  std::string kind = "badnets";  // badnets | clean-label | trojaning | none
  std::string arch = "toy-cnn";
  int target_class = 1;
  TriggerConfig trigger;
  int n_poison = 0;
  double poison_fraction = 0.01;  // used when n_poison == 0
  CleanLabelOptions clean_label;
  TrojanOptions trojan;
  bool train_clean_reference = false;
  TrainSchedule schedule;
};

struct EraseConfig {
  std::string method = "dhbe";  // dhbe | finetune | none
  DistillConfig distill;
  FinetuneOptions finetune;
  int finetune_subset_size = 2000;  // clean training samples available
  int checkpoint_every_epochs = 0;
};

struct EvalConfig {
  std::vector<int> amplifications = {1, 4, 9};
  std::vector<std::string> activation_layers = {"fc", "last-conv"};
  std::vector<std::string> activation_norms = {"l1", "linf"};
  int sample_count = 500;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string out = "run";
  DatasetSpec dataset;
  AttackConfig attack;
  EraseConfig erase;
  EvalConfig eval;

  void validate() const;
};

// Parses a declarative JSON run config. Unknown keys are rejected so typos
// fail loudly; absent keys take the defaults above (reference settings).
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

TriggerSpec build_trigger(const TriggerConfig& tc, int channels, int target_class);

}  // namespace dhbe
