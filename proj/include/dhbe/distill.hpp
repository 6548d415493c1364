#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "dhbe/optim.hpp"
#include "dhbe/zoo.hpp"

namespace dhbe {

// Hyperparameters of the erasing run. Defaults reproduce the reference
// configuration; desk-scale runs shrink epochs and the generator width.
struct DistillConfig {
  double lambda = 0.1;  // weight of the backdoor-regularization term
  int k = 3;            // student updates per outer iteration
  int batch_size = 128;
  double student_lr = 0.1;
  double gen_lr = 1e-3;
  double trigger_gen_lr = 1e-3;
  double student_momentum = 0.9;
  double student_weight_decay = 5e-4;
  int iterations_per_epoch = 50;
  int epochs = 300;
  std::vector<int> lr_decay_epochs{180, 240};
  double lr_decay_factor = 0.1;
  int trigger_h = 5, trigger_w = 5;
  double trigger_scale = 1.0;
  int latent_dim = 256;
  int gen_base_channels = 0;  // 0 = auto: 128 for standard sizes, 32 for toy
  // Both clean and trigger-pasted fake batches go through the student in
  // training mode so its normalization statistics absorb them; exposed as an
  // ablation knob because it materially affects erasing.
  bool student_train_mode = true;

  void validate() const;
};

struct LossRecord {
  int epoch = 0;
  int iteration = 0;
  double d_term = 0.0;
  double r_term = 0.0;
  double gen_loss = 0.0;
  double trigger_gen_loss = 0.0;
  double student_lr = 0.0;
};

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::string& path);

// --------------------------------------------------------------------------
// Free operations (also used directly by tests)

// Mean over the batch of the per-sample l1 distance between pre-softmax
// outputs. Throws on non-finite inputs.
double discrepancy_loss(const Tensor& teacher_logits, const Tensor& student_logits);

// Mean over the batch of ||S(x) - S(x + p)||_1 on pre-softmax outputs; both
// passes run in the given mode (training mode in the erasing loop).
double regularization_loss(Network& student, const Tensor& x_batch,
                           const Tensor& padded_trigger_batch, Mode mode = Mode::kTrain);

// Places each patch at an independently uniform, fully-in-bounds position of
// an otherwise zero (B,H,W,C) canvas. l1 mass is preserved exactly.
Tensor pad_trigger_random(const Tensor& patch_batch, int full_h, int full_w, RngStream& rng,
                          std::vector<std::pair<int, int>>* positions = nullptr);
Tensor pad_trigger_at(const Tensor& patch_batch, int full_h, int full_w,
                      const std::vector<std::pair<int, int>>& positions);

// Denormalize the fake sample, add the raw-pixel trigger, renormalize. No
// clamping: synthetic samples are not pixel-bounded.
Tensor mix_trigger_into_fake(const Tensor& x_normalized, const Tensor& padded_trigger,
                             const NormStats& stats);

// --------------------------------------------------------------------------
// Engine

class DistillEngine {
 public:
  DistillEngine(ModelBundle& teacher, const DistillConfig& config, uint64_t seed);

  // All randomness of one inner step, drawable up front so tests can replay
  // the exact batch around an update.
  struct BatchDraw {
    Tensor z_samples;
    Tensor z_triggers;
    std::vector<std::pair<int, int>> positions;
  };
  BatchDraw draw_batch();

  // Forward-only objective evaluations on a frozen draw.
  double eval_discrepancy(const BatchDraw& draw);
  double eval_regularization(const BatchDraw& draw);
  double eval_student_loss(const BatchDraw& draw, double* d_term = nullptr,
                           double* r_term = nullptr);

  // One update of the designated parameter set; other networks' parameters
  // are untouched (their gradient scratch is cleared).
  void student_step(const BatchDraw& draw, double* d_term = nullptr, double* r_term = nullptr);
  void generator_step(const BatchDraw& draw, double* loss = nullptr);
  void trigger_generator_step(const BatchDraw& draw, double* loss = nullptr);

  void decay_learning_rates(double factor);
  double student_lr() const { return student_opt_.lr(); }

  ModelBundle& teacher() { return teacher_; }
  ModelBundle& student() { return student_; }
  SampleGenerator& sample_generator() { return gen_; }
  TriggerGenerator& trigger_generator() { return trigger_gen_; }
  const DistillConfig& config() const { return config_; }

  int64_t student_steps() const { return student_steps_; }
  int64_t generator_steps() const { return generator_steps_; }
  int64_t trigger_generator_steps() const { return trigger_generator_steps_; }

  // Teacher parameters and buffers must never change; throws otherwise.
  void verify_teacher_frozen() const;

 private:
  Tensor generate_samples(const Tensor& z, bool with_grad);
  Tensor generate_mixed(const Tensor& x, const BatchDraw& draw, bool trigger_grad,
                        Tensor* padded_out);

  DistillConfig config_;
  ModelBundle& teacher_;
  ModelBundle student_;
  SampleGenerator gen_;
  TriggerGenerator trigger_gen_;
  Sgd student_opt_;
  Adam gen_opt_, trigger_gen_opt_;
  RngStream latent_rng_, trigger_latent_rng_, padding_rng_;
  uint64_t teacher_hash_ = 0;
  Mode student_mode_;
  int64_t student_steps_ = 0, generator_steps_ = 0, trigger_generator_steps_ = 0;
};

struct DistillResult {
  ModelBundle student;
  std::vector<LossRecord> history;
};

using EpochCallback = std::function<void(int epoch, DistillEngine& engine)>;

// Full erasing loop: epochs x iterations outer steps, each k student updates
// followed by one sample-generator and one trigger-generator update, with all
// three learning rates decayed together at the configured epochs.
DistillResult run_dhbe(ModelBundle& teacher, const DistillConfig& config, uint64_t seed,
                       const EpochCallback& on_epoch = nullptr);

}  // namespace dhbe
