#pragma once

#include <functional>
#include <map>
#include <string>

#include "dhbe/attacks.hpp"
#include "dhbe/data.hpp"
#include "dhbe/train.hpp"

namespace dhbe {

// Batched label predictor on raw [0,1] images; lets tests drive the metrics
// with hand-constructed prediction tables.
using PredictFn = std::function<std::vector<int>(const Tensor& raw_images)>;

PredictFn model_predictor(ModelBundle& model);

// Fraction of samples whose argmax logit equals the label (evaluation mode).
double accuracy(const PredictFn& predict, const LabeledDataset& test_set);
double accuracy(ModelBundle& model, const LabeledDataset& test_set);

// Attack success rate at amplification k: among samples that are not of the
// target class AND correctly classified clean, the fraction redirected to the
// target once stamped (clamped real-image semantics). Raises when the
// eligible set is empty: that signals a broken model, not a defended one.
struct AsrResult {
  double asr = 0.0;
  int eligible_count = 0;
};
AsrResult attack_success_rate(const PredictFn& predict, const LabeledDataset& test_set,
                              const TriggerSpec& trigger, int target_class,
                              int amplification = 1);
AsrResult attack_success_rate(ModelBundle& model, const LabeledDataset& test_set,
                              const TriggerSpec& trigger, int amplification = 1);

enum class ActivationLayer { kLastConv, kFc };
enum class DiffNorm { kL1, kLinf };
std::string activation_layer_name(ActivationLayer l);
std::string diff_norm_name(DiffNorm n);

struct FiveNumberSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};
FiveNumberSummary five_number_summary(std::vector<double> values);

// Per-sample ||act(x) - act(x + trigger)|| at the named layer, eval mode,
// over up to sample_count clean test inputs.
FiveNumberSummary activation_difference(ModelBundle& model, const LabeledDataset& test_set,
                                        const TriggerSpec& trigger, ActivationLayer layer,
                                        DiffNorm norm, int sample_count);

// --------------------------------------------------------------------------
// Reports

struct EvalReport {
  double acc = 0.0;                                  // [0,1]
  std::map<int, double> asr_by_amplification;        // {1,4,9} -> [0,1]
  int eligible_count = 0;
  // key: "<layer>/<norm>", e.g. "fc/l1"
  std::map<std::string, FiveNumberSummary> activation_diffs;
  std::string model_id;
  std::string trigger_name;
  uint64_t seed = 0;
};

void save_eval_report(const EvalReport& report, const std::string& path);
EvalReport load_eval_report(const std::string& path);
std::string eval_report_csv_header();
std::string eval_report_csv_row(const EvalReport& report);

}  // namespace dhbe
