#pragma once

#include <optional>

#include "dhbe/attacks.hpp"
#include "dhbe/data.hpp"

namespace dhbe {

enum class TriggerKind { kPixel, kSquare, kWatermark, kSig, kSteganograph };
TriggerKind parse_trigger_kind(const std::string& s);

// Parameters for the closed-form trigger-distance bounds; each kind reads
// the subset it needs and throws on missing values.
struct EmBoundParams {
  std::optional<int> h, w, channels;       // square
  std::optional<double> opacity;           // watermark
  std::optional<double> delta;             // sinusoidal amplitude
  std::optional<int> img_h, img_w;         // full-image kinds
  std::optional<int> bits;                 // steganograph LSB count
};

// Upper bound on the expected l1 earth-mover distance between a class
// distribution and its backdoored counterpart:
//   pixel: 1;  square: h*w*C;  watermark: opacity*H*W*C;
//   sinusoidal: delta/sqrt(2)*H*W*C;  steganograph: (2^bits - 1)/255*H*W*C.
double trigger_em_bound(TriggerKind kind, const EmBoundParams& params);

// Monte-Carlo sliced Wasserstein-1 distance between two sample sets (rows =
// samples), rescaled by the ambient dimension to approximate the l1-cost EM
// distance. Exact 1-D W1 between the projected empirical distributions.
double sliced_wasserstein(const Tensor& samples_a, const Tensor& samples_b, int n_projections,
                          RngStream& rng);

// Exact 1-D Wasserstein-1 between empirical distributions (helper, also used
// by tests as the analytic base case).
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

// l1 mass of the concrete trigger pattern divided by the estimated class
// distance; values far below 1 are what make patch backdoors stealthy.
double separation_ratio(const LabeledDataset& ds, int source_class, int target_class,
                        const TriggerSpec& trigger, int n_projections, RngStream& rng,
                        int max_samples_per_class = 500);

}  // namespace dhbe
