#include "dhbe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dhbe {

using nlohmann::json;

PredictFn model_predictor(ModelBundle& model) {
  return [&model](const Tensor& raw) { return predict_labels(model, raw); };
}

double accuracy(const PredictFn& predict, const LabeledDataset& test_set) {
  if (test_set.size() == 0) throw ContractError("accuracy on empty test set");
  const auto pred = predict(test_set.images);
  int ok = 0;
  for (int i = 0; i < test_set.size(); ++i)
    ok += pred[static_cast<size_t>(i)] == test_set.labels[static_cast<size_t>(i)];
  return static_cast<double>(ok) / test_set.size();
}

double accuracy(ModelBundle& model, const LabeledDataset& test_set) {
  return accuracy(model_predictor(model), test_set);
}

AsrResult attack_success_rate(const PredictFn& predict, const LabeledDataset& test_set,
                              const TriggerSpec& trigger, int target_class, int amplification) {
  if (test_set.size() == 0) throw ContractError("asr on empty test set");
  const auto clean_pred = predict(test_set.images);

  Tensor stamped(test_set.images.shape());
  const int64_t img_sz =
      static_cast<int64_t>(test_set.height()) * test_set.width() * test_set.channels();
  for (int i = 0; i < test_set.size(); ++i) {
    Tensor s = amplify_trigger(test_set.image(i), trigger, amplification, /*clamp=*/true);
    std::memcpy(stamped.data() + i * img_sz, s.data(),
                sizeof(float) * static_cast<size_t>(img_sz));
  }
  const auto stamped_pred = predict(stamped);

  int eligible = 0, redirected = 0;
  for (int i = 0; i < test_set.size(); ++i) {
    const int y = test_set.labels[static_cast<size_t>(i)];
    if (y == target_class) continue;
    if (clean_pred[static_cast<size_t>(i)] != y) continue;
    ++eligible;
    redirected += stamped_pred[static_cast<size_t>(i)] == target_class;
  }
  if (eligible == 0)
    throw MeasurementError("no eligible samples for ASR: model misclassifies everything");
  return {static_cast<double>(redirected) / eligible, eligible};
}

AsrResult attack_success_rate(ModelBundle& model, const LabeledDataset& test_set,
                              const TriggerSpec& trigger, int amplification) {
  return attack_success_rate(model_predictor(model), test_set, trigger, trigger.target_class,
                             amplification);
}

std::string activation_layer_name(ActivationLayer l) {
  return l == ActivationLayer::kLastConv ? "last-conv" : "fc";
}
std::string diff_norm_name(DiffNorm n) { return n == DiffNorm::kL1 ? "l1" : "linf"; }

FiveNumberSummary five_number_summary(std::vector<double> values) {
  if (values.empty()) throw ContractError("summary of empty sample");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * (static_cast<double>(values.size()) - 1.0);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

FiveNumberSummary activation_difference(ModelBundle& model, const LabeledDataset& test_set,
                                        const TriggerSpec& trigger, ActivationLayer layer,
                                        DiffNorm norm, int sample_count) {
  if (test_set.size() == 0) throw ContractError("activation difference on empty set");
  const int n = std::min(sample_count, test_set.size());
  const size_t tap =
      layer == ActivationLayer::kLastConv ? model.last_conv_tap : model.net.n_layers();
  const int h = test_set.height(), w = test_set.width(), c = test_set.channels();

  std::vector<double> diffs;
  diffs.reserve(static_cast<size_t>(n));
  NoGradGuard ng;
  const int kBatch = 256;
  for (int start = 0; start < n; start += kBatch) {
    const int bs = std::min(kBatch, n - start);
    Tensor clean({bs, h, w, c}), stamped({bs, h, w, c});
    const int64_t img_sz = static_cast<int64_t>(h) * w * c;
    for (int j = 0; j < bs; ++j) {
      Tensor img = test_set.image(start + j);
      std::memcpy(clean.data() + j * img_sz, img.data(),
                  sizeof(float) * static_cast<size_t>(img_sz));
      const auto pos = resolve_placement(trigger, h, w, nullptr);
      Tensor st = apply_trigger(img, trigger, pos, /*clamp=*/true);
      std::memcpy(stamped.data() + j * img_sz, st.data(),
                  sizeof(float) * static_cast<size_t>(img_sz));
    }
    Tensor a = model.net.forward_prefix(normalize_batch(clean, model.norm), tap, Mode::kEval);
    Tensor b = model.net.forward_prefix(normalize_batch(stamped, model.norm), tap, Mode::kEval);
    const int64_t feat = a.size() / bs;
    for (int j = 0; j < bs; ++j) {
      double v = 0.0;
      const float* pa = a.data() + j * feat;
      const float* pb = b.data() + j * feat;
      if (norm == DiffNorm::kL1) {
        for (int64_t t = 0; t < feat; ++t) v += std::fabs(static_cast<double>(pa[t]) - pb[t]);
      } else {
        for (int64_t t = 0; t < feat; ++t)
          v = std::max(v, std::fabs(static_cast<double>(pa[t]) - pb[t]));
      }
      diffs.push_back(v);
    }
  }
  return five_number_summary(diffs);
}

// ---------------------------------------------------------------------------
// Reports

namespace {
json summary_to_json(const FiveNumberSummary& s) {
  return json{{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
}
FiveNumberSummary summary_from_json(const json& j) {
  return {j.at("min").get<double>(), j.at("q1").get<double>(), j.at("median").get<double>(),
          j.at("q3").get<double>(), j.at("max").get<double>()};
}
}  // namespace

void save_eval_report(const EvalReport& report, const std::string& path) {
  json j;
  j["acc"] = report.acc;
  json asr = json::object();
  for (const auto& [k, v] : report.asr_by_amplification) asr[std::to_string(k)] = v;
  j["asr_by_amplification"] = asr;
  j["eligible_count"] = report.eligible_count;
  json diffs = json::object();
  for (const auto& [key, s] : report.activation_diffs) diffs[key] = summary_to_json(s);
  j["activation_diffs"] = diffs;
  j["metadata"] = {{"model_id", report.model_id},
                   {"trigger_name", report.trigger_name},
                   {"seed", report.seed}};
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write eval report: " + path);
  os << j.dump(2) << "\n";
}

EvalReport load_eval_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open eval report: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IngestionError("bad eval report " + path + ": " + e.what());
  }
  EvalReport r;
  r.acc = j.at("acc").get<double>();
  for (const auto& [k, v] : j.at("asr_by_amplification").items())
    r.asr_by_amplification[std::stoi(k)] = v.get<double>();
  r.eligible_count = j.at("eligible_count").get<int>();
  for (const auto& [k, v] : j.at("activation_diffs").items())
    r.activation_diffs[k] = summary_from_json(v);
  const auto& meta = j.at("metadata");
  r.model_id = meta.at("model_id").get<std::string>();
  r.trigger_name = meta.at("trigger_name").get<std::string>();
  r.seed = meta.at("seed").get<uint64_t>();
  return r;
}

std::string eval_report_csv_header() {
  return "model_id,trigger,seed,acc,asr_x1,asr_x4,asr_x9,eligible,fc_l1_median";
}

std::string eval_report_csv_row(const EvalReport& r) {
  auto asr_or = [&](int k) {
    auto it = r.asr_by_amplification.find(k);
    return it == r.asr_by_amplification.end() ? std::string() : std::to_string(it->second);
  };
  std::string fc_med;
  if (auto it = r.activation_diffs.find("fc/l1"); it != r.activation_diffs.end())
    fc_med = std::to_string(it->second.median);
  return r.model_id + "," + r.trigger_name + "," + std::to_string(r.seed) + "," +
         std::to_string(r.acc) + "," + asr_or(1) + "," + asr_or(4) + "," + asr_or(9) + "," +
         std::to_string(r.eligible_count) + "," + fc_med;
}

}  // namespace dhbe
