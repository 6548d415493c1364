#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dhbe/tensor.hpp"

namespace dhbe {

// Single-file checkpoint container. Little-endian binary, bit-exact on
// round-trip: magic, format version, arch id, class count, input size,
// per-channel normalization stats, scalar attributes, then a flat
// name -> tensor map.
struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;

  std::string arch_id;
  int n_classes = 0;
  int input_h = 0, input_w = 0, input_c = 0;
  std::vector<float> norm_mean, norm_std;
  std::map<std::string, double> attrs;
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion-ordered

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dhbe
