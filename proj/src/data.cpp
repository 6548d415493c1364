#include "dhbe/data.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dhbe {

Tensor LabeledDataset::image(int i) const {
  const int h = height(), w = width(), c = channels();
  Tensor out({h, w, c});
  std::memcpy(out.data(), images.data() + static_cast<int64_t>(i) * h * w * c,
              sizeof(float) * static_cast<size_t>(h) * w * c);
  return out;
}

void LabeledDataset::set_image(int i, const Tensor& img) {
  const int h = height(), w = width(), c = channels();
  if (img.size() != static_cast<int64_t>(h) * w * c)
    throw ContractError("set_image size mismatch");
  std::memcpy(images.data() + static_cast<int64_t>(i) * h * w * c, img.data(),
              sizeof(float) * static_cast<size_t>(h) * w * c);
}

namespace {

// Class tints; washed toward neutral per sample so color alone does not
// solve the task.
constexpr float kTint0[3] = {0.95f, 0.45f, 0.25f};
constexpr float kTint1[3] = {0.25f, 0.45f, 0.95f};

void render_blob(Tensor& img, int h, int w, double cy, double cx, double radius,
                 double intensity, const float tint[3]) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double v = intensity * std::exp(-d2 / (2.0 * radius * radius));
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) += static_cast<float>(v * tint[c]);
    }
  }
}

}  // namespace

LabeledDataset make_toy_dataset(const ToySpec& spec, Split split, uint64_t seed) {
  const int n = split == Split::kTrain ? spec.train_n : spec.test_n;
  const int h = spec.height, w = spec.width;
  if (n <= 0 || h < 8 || w < 8) throw ConfigError("bad toy dataset spec");

  RngStream rng = derive_stream(seed, split == Split::kTrain ? "toy-train" : "toy-test");
  LabeledDataset ds;
  ds.n_classes = 2;
  ds.split = split;
  // Pinned population statistics of this generator (stable across seeds), so
  // normalized data is zero-mean unit-variance as the generators assume.
  ds.norm.mean = {0.134f, 0.122f, 0.133f};
  ds.norm.std = {0.128f, 0.102f, 0.127f};
  ds.images = Tensor({n, h, w, 3});
  ds.labels.resize(static_cast<size_t>(n));

  for (int i = 0; i < n; ++i) {
    const int label = rng.uniform_int(2);
    ds.labels[static_cast<size_t>(i)] = label;
    Tensor img({h, w, 3});
    for (int64_t j = 0; j < img.size(); ++j)
      img[j] = 0.12f * static_cast<float>(rng.uniform());

    const bool ambiguous = rng.uniform() < spec.ambiguous_frac;
    double cy, wash;
    if (ambiguous) {
      cy = (0.35 + 0.30 * rng.uniform()) * h;
      wash = 1.0;
    } else {
      cy = (label == 0 ? 0.30 : 0.70) * h + spec.pos_sigma * h * rng.normal();
      wash = spec.tint_wash * rng.uniform();
    }
    const double cx = 0.5 * w + 0.12 * w * rng.normal();
    const double radius = (0.13 + 0.08 * rng.uniform()) * h;
    const double intensity = 0.55 + 0.40 * rng.uniform();
    float tint[3];
    const float* base = label == 0 ? kTint0 : kTint1;
    for (int c = 0; c < 3; ++c)
      tint[c] = static_cast<float>((1.0 - wash) * base[c] + wash * 0.55);
    render_blob(img, h, w, cy, cx, radius, intensity, tint);

    for (int64_t j = 0; j < img.size(); ++j) {
      const float v = img[j] + 0.03f * static_cast<float>(rng.normal());
      img[j] = std::min(1.0f, std::max(0.0f, v));
    }
    ds.set_image(i, img);
  }
  return ds;
}

LabeledDataset load_cifar10(const std::string& root, Split split) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / "cifar-10-batches-bin";
  std::vector<fs::path> files;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  constexpr int kH = 32, kW = 32, kC = 3, kPerFile = 10000;
  const int total = kPerFile * static_cast<int>(files.size());

  LabeledDataset ds;
  ds.n_classes = 10;
  ds.split = split;
  ds.norm.mean = {0.4914f, 0.4822f, 0.4465f};
  ds.norm.std = {0.2470f, 0.2435f, 0.2616f};
  ds.images = Tensor({total, kH, kW, kC});
  ds.labels.resize(static_cast<size_t>(total));

  std::vector<unsigned char> record(1 + kH * kW * kC);
  int idx = 0;
  for (const auto& file : files) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IngestionError("missing CIFAR-10 file: " + file.string());
    for (int r = 0; r < kPerFile; ++r, ++idx) {
      is.read(reinterpret_cast<char*>(record.data()),
              static_cast<std::streamsize>(record.size()));
      if (!is) throw IngestionError("corrupt CIFAR-10 file: " + file.string());
      const int label = record[0];
      if (label > 9) throw IngestionError("bad label in " + file.string());
      ds.labels[static_cast<size_t>(idx)] = label;
      // File stores CHW planes; convert to HWC.
      float* img = ds.images.data() + static_cast<int64_t>(idx) * kH * kW * kC;
      for (int c = 0; c < kC; ++c)
        for (int p = 0; p < kH * kW; ++p)
          img[p * kC + c] = static_cast<float>(record[1 + c * kH * kW + p]) / 255.0f;
    }
  }
  return ds;
}

LabeledDataset load_dataset(const DatasetSpec& spec, Split split, uint64_t seed) {
  LabeledDataset ds;
  if (spec.name == "toy") {
    ds = make_toy_dataset(spec.toy, split, seed);
  } else if (spec.name == "cifar10") {
    ds = load_cifar10(spec.root, split);
  } else {
    throw ConfigError("unknown dataset: " + spec.name);
  }
  if (spec.subset_size > 0 && split == Split::kTrain) {
    RngStream rng = derive_stream(seed, "subset");
    ds = stratified_subset(ds, spec.subset_size, rng);
  }
  return ds;
}

LabeledDataset stratified_subset(const LabeledDataset& ds, int n, RngStream& rng) {
  if (n <= 0 || n > ds.size()) throw ConfigError("bad subset size");
  std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.n_classes));
  for (int i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);

  std::vector<int> take;
  const int base = n / ds.n_classes;
  int extra = n % ds.n_classes;
  for (int c = 0; c < ds.n_classes; ++c) {
    auto& pool = by_class[static_cast<size_t>(c)];
    int want = base + (extra > 0 ? 1 : 0);
    if (extra > 0) --extra;
    if (want > static_cast<int>(pool.size()))
      throw IngestionError("class " + std::to_string(c) + " has too few samples for subset");
    for (int j = 0; j < want; ++j) {
      const int pick = j + rng.uniform_int(static_cast<int>(pool.size()) - j);
      std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(pick)]);
      take.push_back(pool[static_cast<size_t>(j)]);
    }
  }
  std::sort(take.begin(), take.end());

  LabeledDataset out;
  out.n_classes = ds.n_classes;
  out.norm = ds.norm;
  out.split = ds.split;
  out.images = Tensor({static_cast<int>(take.size()), ds.height(), ds.width(), ds.channels()});
  out.labels.resize(take.size());
  for (size_t i = 0; i < take.size(); ++i) {
    out.set_image(static_cast<int>(i), ds.image(take[i]));
    out.labels[i] = ds.labels[static_cast<size_t>(take[i])];
  }
  return out;
}

Tensor class_sample_matrix(const LabeledDataset& ds, int cls, int max_samples, RngStream& rng) {
  std::vector<int> pool;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[static_cast<size_t>(i)] == cls) pool.push_back(i);
  if (pool.empty()) throw MeasurementError("no samples of class " + std::to_string(cls));
  int m = static_cast<int>(pool.size());
  if (max_samples > 0 && max_samples < m) {
    for (int j = 0; j < max_samples; ++j) {
      const int pick = j + rng.uniform_int(m - j);
      std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(pick)]);
    }
    m = max_samples;
  }
  const int d = ds.height() * ds.width() * ds.channels();
  Tensor out({m, d});
  for (int i = 0; i < m; ++i) {
    Tensor img = ds.image(pool[static_cast<size_t>(i)]);
    std::memcpy(out.data() + static_cast<int64_t>(i) * d, img.data(),
                sizeof(float) * static_cast<size_t>(d));
  }
  return out;
}

}  // namespace dhbe
