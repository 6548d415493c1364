#pragma once

#include <functional>

#include "dhbe/data.hpp"
#include "dhbe/zoo.hpp"

namespace dhbe {

struct TrainSchedule {
  int epochs = 200;
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> decay_epochs = {100, 150};
  double decay_factor = 0.1;
  bool augment = true;  // random crop + horizontal flip only
  int crop_pad = 4;
};

using TrainLogFn = std::function<void(int epoch, double loss)>;

// SGD-with-momentum classifier training on raw [0,1] images (normalized
// internally with the dataset statistics). Zero epochs returns the freshly
// initialized model untouched.
ModelBundle train_classifier(const LabeledDataset& ds, ArchId arch,
                             const TrainSchedule& schedule, RngStream& rng,
                             const TrainLogFn& log = nullptr);

// Continues training an existing model (used by finetuning paths).
void train_classifier_inplace(ModelBundle& model, const LabeledDataset& ds,
                              const TrainSchedule& schedule, RngStream& rng,
                              const TrainLogFn& log = nullptr);

// Argmax predictions on raw images, eval mode, batched.
std::vector<int> predict_labels(ModelBundle& model, const Tensor& raw_images,
                                int batch_size = 512);

}  // namespace dhbe
