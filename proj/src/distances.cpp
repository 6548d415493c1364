#include "dhbe/distances.hpp"

#include <algorithm>
#include <cmath>

namespace dhbe {

TriggerKind parse_trigger_kind(const std::string& s) {
  if (s == "pixel") return TriggerKind::kPixel;
  if (s == "square") return TriggerKind::kSquare;
  if (s == "watermark") return TriggerKind::kWatermark;
  if (s == "sig") return TriggerKind::kSig;
  if (s == "steganograph") return TriggerKind::kSteganograph;
  throw ConfigError("unknown trigger kind: " + s);
}

namespace {
template <typename T>
T need(const std::optional<T>& v, const char* what) {
  if (!v) throw ContractError(std::string("missing bound parameter: ") + what);
  return *v;
}
}  // namespace

double trigger_em_bound(TriggerKind kind, const EmBoundParams& p) {
  switch (kind) {
    case TriggerKind::kPixel:
      return 1.0;
    case TriggerKind::kSquare:
      return static_cast<double>(need(p.h, "h")) * need(p.w, "w") * need(p.channels, "channels");
    case TriggerKind::kWatermark:
      return need(p.opacity, "opacity") * need(p.img_h, "img_h") * need(p.img_w, "img_w") *
             need(p.channels, "channels");
    case TriggerKind::kSig:
      return need(p.delta, "delta") / std::sqrt(2.0) * need(p.img_h, "img_h") *
             need(p.img_w, "img_w") * need(p.channels, "channels");
    case TriggerKind::kSteganograph: {
      const int bits = need(p.bits, "bits");
      if (bits < 1 || bits > 8) throw ContractError("steganograph bits must be in [1,8]");
      return (std::pow(2.0, bits) - 1.0) / 255.0 * need(p.img_h, "img_h") *
             need(p.img_w, "img_w") * need(p.channels, "channels");
    }
  }
  throw ContractError("bad trigger kind");
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractError("empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // integral over quantile levels of |Fa^-1 - Fb^-1|
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  size_t i = 0, j = 0;
  double level = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    total += (next - level) * std::fabs(a[i] - b[j]);
    level = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return total;
}

double sliced_wasserstein(const Tensor& samples_a, const Tensor& samples_b, int n_projections,
                          RngStream& rng) {
  if (samples_a.ndim() != 2 || samples_b.ndim() != 2)
    throw ContractError("sample sets must be (n, d) matrices");
  if (samples_a.dim(1) != samples_b.dim(1))
    throw ContractError("sample sets have mismatched dimensionality");
  if (samples_a.dim(0) == 0 || samples_b.dim(0) == 0)
    throw ContractError("empty sample set");
  if (n_projections < 1) throw ContractError("need at least one projection");

  const int d = samples_a.dim(1);
  const int na = samples_a.dim(0), nb = samples_b.dim(0);
  std::vector<double> theta(static_cast<size_t>(d));
  std::vector<double> pa(static_cast<size_t>(na)), pb(static_cast<size_t>(nb));
  double acc = 0.0;
  for (int l = 0; l < n_projections; ++l) {
    double norm2 = 0.0;
    for (int t = 0; t < d; ++t) {
      theta[static_cast<size_t>(t)] = rng.normal();
      norm2 += theta[static_cast<size_t>(t)] * theta[static_cast<size_t>(t)];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int t = 0; t < d; ++t) theta[static_cast<size_t>(t)] *= inv;

    for (int i = 0; i < na; ++i) {
      double s = 0.0;
      const float* row = samples_a.data() + static_cast<int64_t>(i) * d;
      for (int t = 0; t < d; ++t) s += row[t] * theta[static_cast<size_t>(t)];
      pa[static_cast<size_t>(i)] = s;
    }
    for (int i = 0; i < nb; ++i) {
      double s = 0.0;
      const float* row = samples_b.data() + static_cast<int64_t>(i) * d;
      for (int t = 0; t < d; ++t) s += row[t] * theta[static_cast<size_t>(t)];
      pb[static_cast<size_t>(i)] = s;
    }
    acc += wasserstein1_1d(pa, pb);
  }
  // Rescale by the ambient dimension: for an isotropic unit direction,
  // E|theta . v| ~ ||v||_2 * sqrt(2/(pi d)), and for generic v the l1 norm is
  // ||v||_2 * sqrt(2 d / pi), so multiplying by d recovers the l1 scale.
  return acc / n_projections * d;
}

double separation_ratio(const LabeledDataset& ds, int source_class, int target_class,
                        const TriggerSpec& trigger, int n_projections, RngStream& rng,
                        int max_samples_per_class) {
  Tensor a = class_sample_matrix(ds, source_class, max_samples_per_class, rng);
  Tensor b = class_sample_matrix(ds, target_class, max_samples_per_class, rng);
  const double class_distance = sliced_wasserstein(a, b, n_projections, rng);
  const double trigger_mass = l1_norm(trigger.pattern);
  if (trigger_mass == 0.0) return 0.0;
  if (class_distance == 0.0) throw MeasurementError("degenerate class distance");
  return trigger_mass / class_distance;
}

}  // namespace dhbe
