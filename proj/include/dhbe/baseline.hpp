#pragma once

#include "dhbe/data.hpp"
#include "dhbe/train.hpp"

namespace dhbe {

struct FinetuneOptions {
  int epochs = 20;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  int samples_per_epoch = 2000;  // subset duplicated up to this count
  double decay_factor = 0.1;     // applied at epochs/2 and 3*epochs/4
};

// Plain full-model finetuning on a clean subset; the reference unlearning
// baseline the erasing engine is compared against.
ModelBundle finetune_baseline(ModelBundle& model, const LabeledDataset& clean_subset,
                              const FinetuneOptions& opt, RngStream& rng);

}  // namespace dhbe
