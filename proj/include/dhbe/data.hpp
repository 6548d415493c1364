#pragma once

#include <string>
#include <vector>

#include "dhbe/rng.hpp"
#include "dhbe/tensor.hpp"
#include "dhbe/zoo.hpp"

namespace dhbe {

enum class Split { kTrain, kTest };

// Images live in raw pixel space [0,1], NHWC. Normalization statistics are
// declared alongside so every consumer normalizes the same way.
struct LabeledDataset {
  Tensor images;  // (N, H, W, C)
  std::vector<int> labels;
  int n_classes = 0;
  NormStats norm;
  Split split = Split::kTrain;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  int height() const { return images.dim(1); }
  int width() const { return images.dim(2); }
  int channels() const { return images.dim(3); }

  Tensor image(int i) const;
  void set_image(int i, const Tensor& img);
};

struct ToySpec {
  int train_n = 4000;
  int test_n = 1000;
  int height = 12;
  int width = 12;
  // Vertical blob-position spread as a fraction of H.
  double pos_sigma = 0.12;
  // Upper bound of the per-sample color wash toward neutral.
  double tint_wash = 0.7;
  // Fraction of samples rendered with midline position and fully washed
  // tint; their label carries no visual signal, setting the attainable
  // accuracy to roughly 1 - ambiguous_frac / 2.
  double ambiguous_frac = 0.10;
};

struct DatasetSpec {
  std::string name = "toy";  // "toy" | "cifar10"
  std::string root;          // cifar10: directory containing cifar-10-batches-bin
  int subset_size = 0;       // 0 = full; otherwise class-stratified subset (train split)
  ToySpec toy;
};

// Deterministic synthetic two-class dataset: each class is a Gaussian
// intensity blob whose vertical position and color tint are class-dependent.
LabeledDataset make_toy_dataset(const ToySpec& spec, Split split, uint64_t seed);

// Standard binary-format CIFAR-10 under <root>/cifar-10-batches-bin.
LabeledDataset load_cifar10(const std::string& root, Split split);

LabeledDataset load_dataset(const DatasetSpec& spec, Split split, uint64_t seed);

// Class-stratified subset of exactly n samples (n must be divisible by the
// class count or the remainder is spread over the first classes).
LabeledDataset stratified_subset(const LabeledDataset& ds, int n, RngStream& rng);

// Gathers images of one class into a flattened (M, H*W*C) sample matrix.
Tensor class_sample_matrix(const LabeledDataset& ds, int cls, int max_samples, RngStream& rng);

}  // namespace dhbe
