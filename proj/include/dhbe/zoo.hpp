#pragma once

#include <array>
#include <memory>
#include <string>

#include "dhbe/layers.hpp"
#include "dhbe/serialize.hpp"

namespace dhbe {

enum class ArchId { kResnet18_32, kResnet18_64, kToyCnn };

std::string arch_id_name(ArchId id);
ArchId parse_arch_id(const std::string& s);

struct NormStats {
  std::vector<float> mean, std;
};

// A classifier plus everything needed to use it: architecture id, class
// count, expected input geometry and the dataset normalization statistics the
// network was trained under. Forward passes consume normalized NHWC input and
// produce pre-softmax logits.
struct ModelBundle {
  ArchId arch = ArchId::kToyCnn;
  int n_classes = 0;
  std::array<int, 3> input_size{0, 0, 0};  // H, W, C
  NormStats norm;
  Network net;
  // Layer-prefix taps: forward through [0, tap) yields the named activation.
  size_t last_conv_tap = 0;  // output of the final conv/residual stage (pre-pool)
  size_t pool_tap = 0;       // pooled feature vector
  size_t fc_layer_index = 0;

  Tensor logits(const Tensor& x_normalized, Mode mode) {
    return net.forward(x_normalized, mode);
  }
};

ModelBundle build_classifier(ArchId arch, int n_classes, const NormStats& stats,
                             RngStream& init_rng,
                             std::array<int, 3> toy_input_size = {12, 12, 3});

// Deep copy (weights, buffers, metadata).
ModelBundle clone_bundle(ModelBundle& src);

void save_bundle(ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

// Normalize raw [0,1] pixels with the bundle's per-channel statistics.
Tensor normalize_batch(const Tensor& raw, const NormStats& stats);
Tensor denormalize_batch(const Tensor& normalized, const NormStats& stats);

// ---------------------------------------------------------------------------
// Generators

struct SampleGenerator {
  int latent_dim = 256;
  std::array<int, 3> out_size{32, 32, 3};
  int base_channels = 128;  // 128 for the standard nets, smaller for toy sizes
  Network net;

  Tensor generate(const Tensor& z, Mode mode = Mode::kTrain) { return net.forward(z, mode); }
};

// Standard output sizes are (32,32,3) and (64,64,3); other sizes require
// allow_toy and H,W divisible by 4.
SampleGenerator build_sample_generator(int latent_dim, std::array<int, 3> out_size,
                                       RngStream& init_rng, bool allow_toy = false,
                                       int toy_base_channels = 32);

struct TriggerGenerator {
  int latent_dim = 256;
  int patch_h = 5, patch_w = 5, channels = 3;
  float scale = 1.0f;
  Network net;

  // Output is scale * tanh(.), so every patch satisfies
  // ||p||_1 < patch_h * patch_w * scale * channels.
  Tensor generate(const Tensor& z, Mode mode = Mode::kTrain) { return net.forward(z, mode); }
  double l1_bound() const {
    return static_cast<double>(patch_h) * patch_w * scale * channels;
  }
};

TriggerGenerator build_trigger_generator(int latent_dim, int h, int w, float scale,
                                         RngStream& init_rng, int channels = 3);

void save_sample_generator(SampleGenerator& g, const std::string& path);
SampleGenerator load_sample_generator(const std::string& path);
void save_trigger_generator(TriggerGenerator& g, const std::string& path);
TriggerGenerator load_trigger_generator(const std::string& path);

// i.i.d. standard-normal latent batch (B, latent_dim), deterministic given
// the stream state.
Tensor sample_latent(int batch_size, int latent_dim, RngStream& rng);

}  // namespace dhbe
