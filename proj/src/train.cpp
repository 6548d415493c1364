#include "dhbe/train.hpp"

#include <cmath>
#include <cstring>

#include "dhbe/losses.hpp"
#include "dhbe/optim.hpp"

namespace dhbe {

namespace {

// Random crop (zero padding) + horizontal flip, drawn per sample.
Tensor augment_image(const Tensor& img, int crop_pad, RngStream& rng) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out({h, w, c});
  const int dy = rng.uniform_int(2 * crop_pad + 1) - crop_pad;
  const int dx = rng.uniform_int(2 * crop_pad + 1) - crop_pad;
  const bool flip = rng.uniform_int(2) == 1;
  for (int y = 0; y < h; ++y) {
    const int sy = y + dy;
    for (int x = 0; x < w; ++x) {
      const int sx0 = x + dx;
      const int sx = flip ? w - 1 - sx0 : sx0;
      if (sy < 0 || sy >= h || sx0 < 0 || sx0 >= w) continue;  // zero fill
      for (int k = 0; k < c; ++k) out.at(y, x, k) = img.at(sy, sx, k);
    }
  }
  return out;
}

}  // namespace

void train_classifier_inplace(ModelBundle& model, const LabeledDataset& ds,
                              const TrainSchedule& schedule, RngStream& rng,
                              const TrainLogFn& log) {
  if (ds.size() == 0) throw TrainingError("empty training set");
  const int n = ds.size();
  const int h = ds.height(), w = ds.width(), c = ds.channels();
  const int bs = std::min(schedule.batch_size, n);

  Sgd opt(model.net.parameters(), schedule.lr, schedule.momentum, schedule.weight_decay);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  double lr = schedule.lr;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (int de : schedule.decay_epochs)
      if (epoch == de) {
        lr *= schedule.decay_factor;
        opt.set_lr(lr);
      }
    // in-place Fisher-Yates shuffle
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (int start = 0; start + bs <= n; start += bs) {
      Tensor batch({bs, h, w, c});
      std::vector<int> labels(static_cast<size_t>(bs));
      for (int j = 0; j < bs; ++j) {
        const int idx = order[static_cast<size_t>(start + j)];
        Tensor img = ds.image(idx);
        if (schedule.augment) img = augment_image(img, schedule.crop_pad, rng);
        std::memcpy(batch.data() + static_cast<int64_t>(j) * h * w * c, img.data(),
                    sizeof(float) * static_cast<size_t>(h) * w * c);
        labels[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>(idx)];
      }
      Tensor x = normalize_batch(batch, model.norm);
      Tensor logits = model.net.forward(x, Mode::kTrain);
      Tensor grad;
      const double loss = softmax_cross_entropy(logits, labels, &grad);
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
      model.net.backward(grad);
      opt.step();
      opt.zero_grad();
      epoch_loss += loss;
      ++n_batches;
    }
    if (log) log(epoch, n_batches ? epoch_loss / n_batches : 0.0);
  }
}

ModelBundle train_classifier(const LabeledDataset& ds, ArchId arch,
                             const TrainSchedule& schedule, RngStream& rng,
                             const TrainLogFn& log) {
  if (ds.size() == 0) throw TrainingError("empty training set");
  ModelBundle model = build_classifier(arch, ds.n_classes, ds.norm, rng,
                                       {ds.height(), ds.width(), ds.channels()});
  train_classifier_inplace(model, ds, schedule, rng, log);
  return model;
}

std::vector<int> predict_labels(ModelBundle& model, const Tensor& raw_images, int batch_size) {
  const int n = raw_images.dim(0);
  const int h = raw_images.dim(1), w = raw_images.dim(2), c = raw_images.dim(3);
  std::vector<int> out(static_cast<size_t>(n));
  NoGradGuard ng;
  for (int start = 0; start < n; start += batch_size) {
    const int bs = std::min(batch_size, n - start);
    Tensor batch({bs, h, w, c});
    std::memcpy(batch.data(), raw_images.data() + static_cast<int64_t>(start) * h * w * c,
                sizeof(float) * static_cast<size_t>(bs) * h * w * c);
    Tensor logits = model.net.forward(normalize_batch(batch, model.norm), Mode::kEval);
    for (int i = 0; i < bs; ++i) {
      const float* row = logits.data() + static_cast<int64_t>(i) * model.n_classes;
      int best = 0;
      for (int j = 1; j < model.n_classes; ++j)
        if (row[j] > row[best]) best = j;
      out[static_cast<size_t>(start + i)] = best;
    }
  }
  return out;
}

}  // namespace dhbe
