#include "dhbe/distill.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "dhbe/losses.hpp"

namespace dhbe {

void DistillConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (k < 1) throw ConfigError("k must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (student_lr <= 0.0 || gen_lr <= 0.0 || trigger_gen_lr <= 0.0)
    throw ConfigError("learning rates must be positive");
  if (iterations_per_epoch < 0 || epochs < 0) throw ConfigError("negative schedule");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    throw ConfigError("lr_decay_factor must be in (0, 1]");
  int prev = -1;
  for (int e : lr_decay_epochs) {
    if (e <= prev) throw ConfigError("lr_decay_epochs must be strictly increasing");
    if (e >= epochs && epochs > 0) throw ConfigError("lr_decay_epochs must be below epochs");
    prev = e;
  }
  if (trigger_h < 1 || trigger_w < 1) throw ConfigError("trigger patch must be positive");
  if (!(trigger_scale > 0.0 && trigger_scale <= 1.0))
    throw ConfigError("trigger scale must be in (0, 1]");
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
}

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write loss history: " + path);
  os << "epoch,iteration,D,R,L_g,L_gp,student_lr\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.iteration,
                  r.d_term, r.r_term, r.gen_loss, r.trigger_gen_loss, r.student_lr);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Free operations

double discrepancy_loss(const Tensor& teacher_logits, const Tensor& student_logits) {
  if (!all_finite(teacher_logits) || !all_finite(student_logits))
    throw TrainingError("non-finite logits in discrepancy");
  return mean_l1_distance(teacher_logits, student_logits, nullptr, nullptr);
}

double regularization_loss(Network& student, const Tensor& x_batch,
                           const Tensor& padded_trigger_batch, Mode mode) {
  if (!x_batch.same_shape(padded_trigger_batch))
    throw ContractError("regularization inputs must share the full image shape");
  Tensor x_plus = x_batch;
  add_inplace(x_plus, padded_trigger_batch);
  NoGradGuard ng;
  Tensor a = student.forward(x_batch, mode);
  Tensor b = student.forward(x_plus, mode);
  return mean_l1_distance(a, b, nullptr, nullptr);
}

Tensor pad_trigger_at(const Tensor& patch_batch, int full_h, int full_w,
                      const std::vector<std::pair<int, int>>& positions) {
  const int b = patch_batch.dim(0), h = patch_batch.dim(1), w = patch_batch.dim(2),
            c = patch_batch.dim(3);
  if (h > full_h || w > full_w) throw ContractError("patch larger than target image");
  if (static_cast<int>(positions.size()) != b) throw ContractError("positions batch mismatch");
  Tensor out({b, full_h, full_w, c});
  for (int i = 0; i < b; ++i) {
    const auto [row, col] = positions[static_cast<size_t>(i)];
    if (row < 0 || col < 0 || row + h > full_h || col + w > full_w)
      throw ContractError("pad position out of bounds");
    for (int y = 0; y < h; ++y) {
      const float* src = patch_batch.data() + ((static_cast<int64_t>(i) * h + y) * w) * c;
      float* dst =
          out.data() + ((static_cast<int64_t>(i) * full_h + row + y) * full_w + col) * c;
      std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(w) * c);
    }
  }
  return out;
}

Tensor pad_trigger_random(const Tensor& patch_batch, int full_h, int full_w, RngStream& rng,
                          std::vector<std::pair<int, int>>* positions) {
  const int b = patch_batch.dim(0), h = patch_batch.dim(1), w = patch_batch.dim(2);
  if (h > full_h || w > full_w) throw ContractError("patch larger than target image");
  std::vector<std::pair<int, int>> pos(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i)
    pos[static_cast<size_t>(i)] = {rng.uniform_int(full_h - h + 1),
                                   rng.uniform_int(full_w - w + 1)};
  if (positions) *positions = pos;
  return pad_trigger_at(patch_batch, full_h, full_w, pos);
}

Tensor mix_trigger_into_fake(const Tensor& x_normalized, const Tensor& padded_trigger,
                             const NormStats& stats) {
  if (!x_normalized.same_shape(padded_trigger)) throw ContractError("mix shape mismatch");
  Tensor raw = denormalize_batch(x_normalized, stats);
  add_inplace(raw, padded_trigger);
  return normalize_batch(raw, stats);
}

// ---------------------------------------------------------------------------
// Engine

namespace {

uint64_t full_state_hash(Network& net) {
  // parameters plus buffers (running statistics)
  uint64_t h = parameter_hash(net);
  for (Buffer* b : net.buffers()) {
    const auto* p = reinterpret_cast<const uint8_t*>(b->value.data());
    const int64_t bytes = b->value.size() * static_cast<int64_t>(sizeof(float));
    for (int64_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void zero_params(Network& net) {
  for (Parameter* p : net.parameters()) p->zero_grad();
}

}  // namespace

DistillEngine::DistillEngine(ModelBundle& teacher, const DistillConfig& config, uint64_t seed)
    : config_(config),
      teacher_(teacher),
      student_(clone_bundle(teacher)),
      gen_([&] {
        RngStream init = derive_stream(seed, "init-sample-gen");
        const auto& sz = teacher.input_size;
        const bool standard = (sz[0] == 32 || sz[0] == 64) && sz[0] == sz[1] && sz[2] == 3;
        const int base = config.gen_base_channels > 0 ? config.gen_base_channels
                         : standard                   ? 128
                                                      : 32;
        return build_sample_generator(config.latent_dim, sz, init, /*allow_toy=*/true, base);
      }()),
      trigger_gen_([&] {
        RngStream init = derive_stream(seed, "init-trigger-gen");
        return build_trigger_generator(config.latent_dim, config.trigger_h, config.trigger_w,
                                       static_cast<float>(config.trigger_scale), init,
                                       teacher.input_size[2]);
      }()),
      student_opt_(student_.net.parameters(), config.student_lr, config.student_momentum,
                   config.student_weight_decay),
      gen_opt_(gen_.net.parameters(), config.gen_lr),
      trigger_gen_opt_(trigger_gen_.net.parameters(), config.trigger_gen_lr),
      latent_rng_(derive_stream(seed, "latent")),
      trigger_latent_rng_(derive_stream(seed, "trigger-latent")),
      padding_rng_(derive_stream(seed, "padding")),
      student_mode_(config.student_train_mode ? Mode::kTrain : Mode::kEval) {
  config_.validate();
  if (config_.trigger_h > teacher.input_size[0] || config_.trigger_w > teacher.input_size[1])
    throw ConfigError("trigger patch exceeds model input size");
  teacher_hash_ = full_state_hash(teacher_.net);
}

void DistillEngine::verify_teacher_frozen() const {
  if (full_state_hash(teacher_.net) != teacher_hash_)
    throw ContractError("teacher state changed during distillation");
}

DistillEngine::BatchDraw DistillEngine::draw_batch() {
  BatchDraw d;
  d.z_samples = sample_latent(config_.batch_size, config_.latent_dim, latent_rng_);
  d.z_triggers = sample_latent(config_.batch_size, config_.latent_dim, trigger_latent_rng_);
  const int h = teacher_.input_size[0], w = teacher_.input_size[1];
  d.positions.resize(static_cast<size_t>(config_.batch_size));
  for (auto& p : d.positions)
    p = {padding_rng_.uniform_int(h - config_.trigger_h + 1),
         padding_rng_.uniform_int(w - config_.trigger_w + 1)};
  return d;
}

Tensor DistillEngine::generate_samples(const Tensor& z, bool with_grad) {
  if (with_grad) return gen_.net.forward(z, Mode::kTrain);
  NoGradGuard ng;
  return gen_.net.forward(z, Mode::kTrain);
}

Tensor DistillEngine::generate_mixed(const Tensor& x, const BatchDraw& draw, bool trigger_grad,
                                     Tensor* padded_out) {
  Tensor patches;
  if (trigger_grad) {
    patches = trigger_gen_.net.forward(draw.z_triggers, Mode::kTrain);
  } else {
    NoGradGuard ng;
    patches = trigger_gen_.net.forward(draw.z_triggers, Mode::kTrain);
  }
  Tensor padded =
      pad_trigger_at(patches, teacher_.input_size[0], teacher_.input_size[1], draw.positions);
  if (padded_out) *padded_out = padded;
  return mix_trigger_into_fake(x, padded, teacher_.norm);
}

double DistillEngine::eval_discrepancy(const BatchDraw& draw) {
  NoGradGuard ng;
  Tensor x = gen_.net.forward(draw.z_samples, Mode::kTrain);
  Tensor t = teacher_.net.forward(x, Mode::kEval);
  Tensor s = student_.net.forward(x, student_mode_);
  return discrepancy_loss(t, s);
}

double DistillEngine::eval_regularization(const BatchDraw& draw) {
  NoGradGuard ng;
  Tensor x = gen_.net.forward(draw.z_samples, Mode::kTrain);
  Tensor x_mix = generate_mixed(x, draw, /*trigger_grad=*/false, nullptr);
  Tensor s = student_.net.forward(x, student_mode_);
  Tensor s_mix = student_.net.forward(x_mix, student_mode_);
  return mean_l1_distance(s, s_mix, nullptr, nullptr);
}

double DistillEngine::eval_student_loss(const BatchDraw& draw, double* d_term, double* r_term) {
  const double d = eval_discrepancy(draw);
  const double r = eval_regularization(draw);
  if (d_term) *d_term = d;
  if (r_term) *r_term = r;
  return d + config_.lambda * r;
}

void DistillEngine::student_step(const BatchDraw& draw, double* d_term, double* r_term) {
  Tensor x = generate_samples(draw.z_samples, /*with_grad=*/false);
  Tensor x_mix = generate_mixed(x, draw, /*trigger_grad=*/false, nullptr);
  Tensor t_logits;
  {
    NoGradGuard ng;
    t_logits = teacher_.net.forward(x, Mode::kEval);
  }
  Tensor s_logits = student_.net.forward(x, student_mode_);
  Tensor s_mix = student_.net.forward(x_mix, student_mode_);

  Tensor g_s_from_d, g_s_from_r, g_mix;
  const double d = mean_l1_distance(t_logits, s_logits, nullptr, &g_s_from_d);
  const double r = mean_l1_distance(s_logits, s_mix, &g_s_from_r, &g_mix);
  const double loss = d + config_.lambda * r;
  if (!std::isfinite(loss))
    throw TrainingError("non-finite student loss (D=" + std::to_string(d) +
                        ", R=" + std::to_string(r) + ")");

  const float lam = static_cast<float>(config_.lambda);
  scale_inplace(g_mix, lam);
  for (int64_t i = 0; i < g_s_from_d.size(); ++i) g_s_from_d[i] += lam * g_s_from_r[i];

  student_.net.backward(g_mix);       // trigger-pasted pass (most recent)
  student_.net.backward(g_s_from_d);  // clean pass
  student_opt_.step();
  student_opt_.zero_grad();
  ++student_steps_;
  if (d_term) *d_term = d;
  if (r_term) *r_term = r;
}

void DistillEngine::generator_step(const BatchDraw& draw, double* loss) {
  Tensor x = generate_samples(draw.z_samples, /*with_grad=*/true);
  Tensor t_logits = teacher_.net.forward(x, Mode::kEval);
  Tensor s_logits = student_.net.forward(x, student_mode_);

  Tensor g_t, g_s;
  const double d = mean_l1_distance(t_logits, s_logits, &g_t, &g_s);
  if (!std::isfinite(d)) throw TrainingError("non-finite generator loss");
  // L_g = -D: ascend the discrepancy.
  scale_inplace(g_t, -1.0f);
  scale_inplace(g_s, -1.0f);
  Tensor gx_s = student_.net.backward(g_s);
  Tensor gx_t = teacher_.net.backward(g_t);
  add_inplace(gx_t, gx_s);
  gen_.net.backward(gx_t);
  gen_opt_.step();
  gen_opt_.zero_grad();
  // clear gradient scratch left on the frozen nets by this pass
  zero_params(teacher_.net);
  zero_params(student_.net);
  ++generator_steps_;
  if (loss) *loss = -d;
}

void DistillEngine::trigger_generator_step(const BatchDraw& draw, double* loss) {
  Tensor x = generate_samples(draw.z_samples, /*with_grad=*/false);
  Tensor padded;
  Tensor x_mix = generate_mixed(x, draw, /*trigger_grad=*/true, &padded);
  Tensor s_logits;
  {
    NoGradGuard ng;
    s_logits = student_.net.forward(x, student_mode_);
  }
  Tensor s_mix = student_.net.forward(x_mix, student_mode_);

  Tensor g_mix;
  const double r = mean_l1_distance(s_logits, s_mix, nullptr, &g_mix);
  if (!std::isfinite(r)) throw TrainingError("non-finite trigger-generator loss");
  // L_gp = -R: ascend the regularization term.
  scale_inplace(g_mix, -1.0f);
  Tensor gx = student_.net.backward(g_mix);
  // adjoint of mix: d(x_mix)/d(padded) = 1/std per channel
  const int c = teacher_.input_size[2];
  const int64_t rows = gx.size() / c;
  for (int64_t row = 0; row < rows; ++row)
    for (int k = 0; k < c; ++k)
      gx[row * c + k] /= teacher_.norm.std[static_cast<size_t>(k)];
  // adjoint of padding: crop at each sample's position
  const int ph = config_.trigger_h, pw = config_.trigger_w;
  const int fh = teacher_.input_size[0], fw = teacher_.input_size[1];
  Tensor g_patch({config_.batch_size, ph, pw, c});
  for (int i = 0; i < config_.batch_size; ++i) {
    const auto [prow, pcol] = draw.positions[static_cast<size_t>(i)];
    for (int y = 0; y < ph; ++y) {
      const float* src = gx.data() + ((static_cast<int64_t>(i) * fh + prow + y) * fw + pcol) * c;
      float* dst = g_patch.data() + ((static_cast<int64_t>(i) * ph + y) * pw) * c;
      std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(pw) * c);
    }
  }
  trigger_gen_.net.backward(g_patch);
  trigger_gen_opt_.step();
  trigger_gen_opt_.zero_grad();
  zero_params(student_.net);
  ++trigger_generator_steps_;
  if (loss) *loss = -r;
}

void DistillEngine::decay_learning_rates(double factor) {
  student_opt_.set_lr(student_opt_.lr() * factor);
  gen_opt_.set_lr(gen_opt_.lr() * factor);
  trigger_gen_opt_.set_lr(trigger_gen_opt_.lr() * factor);
}

DistillResult run_dhbe(ModelBundle& teacher, const DistillConfig& config, uint64_t seed,
                       const EpochCallback& on_epoch) {
  config.validate();
  if (config.lambda == 0.0)
    std::fprintf(stderr,
                 "[dhbe] lambda = 0: backdoor suppression relies only on training-mode "
                 "statistics\n");
  DistillEngine engine(teacher, config, seed);
  std::vector<LossRecord> history;
  history.reserve(static_cast<size_t>(config.epochs) *
                  static_cast<size_t>(config.iterations_per_epoch));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int de : config.lr_decay_epochs)
      if (epoch == de) engine.decay_learning_rates(config.lr_decay_factor);
    for (int it = 0; it < config.iterations_per_epoch; ++it) {
      LossRecord rec;
      rec.epoch = epoch;
      rec.iteration = it;
      for (int j = 0; j < config.k; ++j) {
        auto draw = engine.draw_batch();
        engine.student_step(draw, &rec.d_term, &rec.r_term);
      }
      {
        auto draw = engine.draw_batch();
        engine.generator_step(draw, &rec.gen_loss);
      }
      {
        auto draw = engine.draw_batch();
        engine.trigger_generator_step(draw, &rec.trigger_gen_loss);
      }
      rec.student_lr = engine.student_lr();
      history.push_back(rec);
    }
    if (on_epoch) on_epoch(epoch, engine);
  }
  engine.verify_teacher_frozen();
  return {std::move(engine.student()), std::move(history)};
}

}  // namespace dhbe
