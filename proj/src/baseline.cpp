#include "dhbe/baseline.hpp"

#include <cmath>
#include <cstring>

#include "dhbe/losses.hpp"
#include "dhbe/optim.hpp"

namespace dhbe {

ModelBundle finetune_baseline(ModelBundle& model, const LabeledDataset& clean_subset,
                              const FinetuneOptions& opt, RngStream& rng) {
  if (clean_subset.size() == 0) throw TrainingError("empty finetuning subset");
  ModelBundle out = clone_bundle(model);
  if (opt.epochs == 0) return out;

  const int n = clean_subset.size();
  const int h = clean_subset.height(), w = clean_subset.width(), c = clean_subset.channels();
  const int per_epoch = std::max(n, opt.samples_per_epoch);
  const int bs = std::min(opt.batch_size, per_epoch);

  Sgd sgd(out.net.parameters(), opt.lr, opt.momentum, 0.0);
  std::vector<int> order(static_cast<size_t>(per_epoch));
  for (int i = 0; i < per_epoch; ++i) order[static_cast<size_t>(i)] = i % n;

  double lr = opt.lr;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    if (epoch == opt.epochs / 2 || epoch == 3 * opt.epochs / 4) {
      lr *= opt.decay_factor;
      sgd.set_lr(lr);
    }
    for (int i = per_epoch - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    for (int start = 0; start + bs <= per_epoch; start += bs) {
      Tensor batch({bs, h, w, c});
      std::vector<int> labels(static_cast<size_t>(bs));
      for (int j = 0; j < bs; ++j) {
        const int idx = order[static_cast<size_t>(start + j)];
        std::memcpy(batch.data() + static_cast<int64_t>(j) * h * w * c,
                    clean_subset.image(idx).data(),
                    sizeof(float) * static_cast<size_t>(h) * w * c);
        labels[static_cast<size_t>(j)] = clean_subset.labels[static_cast<size_t>(idx)];
      }
      Tensor logits = out.net.forward(normalize_batch(batch, out.norm), Mode::kTrain);
      Tensor grad;
      const double loss = softmax_cross_entropy(logits, labels, &grad);
      if (!std::isfinite(loss)) throw TrainingError("non-finite finetuning loss");
      out.net.backward(grad);
      sgd.step();
      sgd.zero_grad();
    }
  }
  return out;
}

}  // namespace dhbe
