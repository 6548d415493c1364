#include "dhbe/zoo.hpp"

#include <cmath>

namespace dhbe {

std::string arch_id_name(ArchId id) {
  switch (id) {
    case ArchId::kResnet18_32: return "resnet18-32";
    case ArchId::kResnet18_64: return "resnet18-64";
    case ArchId::kToyCnn: return "toy-cnn";
  }
  throw ConfigError("bad arch id");
}

ArchId parse_arch_id(const std::string& s) {
  if (s == "resnet18-32") return ArchId::kResnet18_32;
  if (s == "resnet18-64") return ArchId::kResnet18_64;
  if (s == "toy-cnn") return ArchId::kToyCnn;
  throw ConfigError("unknown architecture: " + s);
}

namespace {

void check_stats(const NormStats& stats, int channels) {
  if (static_cast<int>(stats.mean.size()) != channels ||
      static_cast<int>(stats.std.size()) != channels)
    throw ConfigError("normalization stats must have one entry per channel");
  for (float s : stats.std)
    if (!(s > 0.0f)) throw ConfigError("normalization std must be strictly positive");
}

// Resnet-18 with a dataset-size specific stem: 3x3 stride-1 for 32x32 inputs
// (no first pooling), 5x5 stride-2 for 64x64 inputs. Four stages of two basic
// blocks at widths 64/128/256/512, stride 2 at each stage transition.
void build_resnet18(Network& net, int n_classes, bool stem64, size_t* last_conv_tap,
                    size_t* pool_tap) {
  if (stem64)
    net.add<Conv2d>("stem", 3, 64, 5, 2, 2);
  else
    net.add<Conv2d>("stem", 3, 64, 3, 1, 1);
  net.add<BatchNorm>("stem_bn", 64);
  net.add<ReLU>("stem_relu");
  const int widths[4] = {64, 128, 256, 512};
  int in_ch = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int out_ch = widths[stage];
    const int stride = stage == 0 ? 1 : 2;
    net.add<ResidualBlock>("s" + std::to_string(stage + 1) + "b1", in_ch, out_ch, stride);
    net.add<ResidualBlock>("s" + std::to_string(stage + 1) + "b2", out_ch, out_ch, 1);
    in_ch = out_ch;
  }
  *last_conv_tap = net.n_layers();
  net.add<GlobalAvgPool>("pool");
  *pool_tap = net.n_layers();
  net.add<Dense>("fc", 512, n_classes);
}

// Small three-stage conv net for desk-scale experiments: conv-BN-ReLU blocks
// at widths 32/64/128 with stride-2 downsampling, then GAP + linear head.
void build_toy_cnn(Network& net, int n_classes, size_t* last_conv_tap, size_t* pool_tap) {
  const int widths[3] = {32, 64, 128};
  int in_ch = 3;
  for (int i = 0; i < 3; ++i) {
    const std::string p = "b" + std::to_string(i + 1);
    net.add<Conv2d>(p + "_conv", in_ch, widths[i], 3, 2, 1);
    net.add<BatchNorm>(p + "_bn", widths[i]);
    net.add<ReLU>(p + "_relu");
    in_ch = widths[i];
  }
  *last_conv_tap = net.n_layers();
  net.add<GlobalAvgPool>("pool");
  *pool_tap = net.n_layers();
  net.add<Dense>("fc", 128, n_classes);
}

}  // namespace

ModelBundle build_classifier(ArchId arch, int n_classes, const NormStats& stats,
                             RngStream& init_rng, std::array<int, 3> toy_input_size) {
  if (n_classes < 2) throw ConfigError("classifier needs at least two classes");
  ModelBundle b;
  b.arch = arch;
  b.n_classes = n_classes;
  b.norm = stats;
  switch (arch) {
    case ArchId::kResnet18_32:
      b.input_size = {32, 32, 3};
      build_resnet18(b.net, n_classes, false, &b.last_conv_tap, &b.pool_tap);
      break;
    case ArchId::kResnet18_64:
      b.input_size = {64, 64, 3};
      build_resnet18(b.net, n_classes, true, &b.last_conv_tap, &b.pool_tap);
      break;
    case ArchId::kToyCnn:
      if (toy_input_size[0] < 8 || toy_input_size[1] < 8)
        throw ConfigError("toy-cnn input must be at least 8x8");
      b.input_size = toy_input_size;
      build_toy_cnn(b.net, n_classes, &b.last_conv_tap, &b.pool_tap);
      break;
  }
  check_stats(stats, b.input_size[2]);
  b.fc_layer_index = b.net.n_layers() - 1;
  init_he_normal(b.net, init_rng);
  return b;
}

namespace {

void copy_weights(Network& dst, Network& src) {
  auto dp = dst.parameters();
  auto sp = src.parameters();
  if (dp.size() != sp.size()) throw ContractError("parameter count mismatch in copy");
  for (size_t i = 0; i < dp.size(); ++i) dp[i]->value = sp[i]->value;
  auto db = dst.buffers();
  auto sb = src.buffers();
  for (size_t i = 0; i < db.size(); ++i) db[i]->value = sb[i]->value;
}

}  // namespace

ModelBundle clone_bundle(ModelBundle& src) {
  RngStream dummy(0);
  ModelBundle dst = build_classifier(src.arch, src.n_classes, src.norm, dummy, src.input_size);
  copy_weights(dst.net, src.net);
  return dst;
}

Tensor normalize_batch(const Tensor& raw, const NormStats& stats) {
  const int c = raw.dim(raw.ndim() - 1);
  check_stats(stats, c);
  Tensor out = Tensor::uninit(raw.shape());
  const int64_t rows = raw.size() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int k = 0; k < c; ++k)
      out[r * c + k] = (raw[r * c + k] - stats.mean[static_cast<size_t>(k)]) /
                       stats.std[static_cast<size_t>(k)];
  return out;
}

Tensor denormalize_batch(const Tensor& normalized, const NormStats& stats) {
  const int c = normalized.dim(normalized.ndim() - 1);
  check_stats(stats, c);
  Tensor out = Tensor::uninit(normalized.shape());
  const int64_t rows = normalized.size() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int k = 0; k < c; ++k)
      out[r * c + k] = normalized[r * c + k] * stats.std[static_cast<size_t>(k)] +
                       stats.mean[static_cast<size_t>(k)];
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void pack_network(Checkpoint& ckpt, Network& net) {
  for (Parameter* p : net.parameters()) ckpt.tensors.emplace_back(p->name, p->value);
  for (Buffer* b : net.buffers()) ckpt.tensors.emplace_back(b->name, b->value);
}

void unpack_network(const Checkpoint& ckpt, Network& net) {
  for (Parameter* p : net.parameters()) {
    const Tensor* t = ckpt.find(p->name);
    if (!t) throw IngestionError("checkpoint is missing tensor " + p->name);
    if (!t->same_shape(p->value))
      throw IngestionError("checkpoint tensor shape mismatch for " + p->name);
    p->value = *t;
  }
  for (Buffer* b : net.buffers()) {
    const Tensor* t = ckpt.find(b->name);
    if (!t) throw IngestionError("checkpoint is missing buffer " + b->name);
    b->value = *t;
  }
}

}  // namespace

void save_bundle(ModelBundle& bundle, const std::string& path) {
  Checkpoint ckpt;
  ckpt.arch_id = arch_id_name(bundle.arch);
  ckpt.n_classes = bundle.n_classes;
  ckpt.input_h = bundle.input_size[0];
  ckpt.input_w = bundle.input_size[1];
  ckpt.input_c = bundle.input_size[2];
  ckpt.norm_mean = bundle.norm.mean;
  ckpt.norm_std = bundle.norm.std;
  pack_network(ckpt, bundle.net);
  save_checkpoint(ckpt, path);
}

ModelBundle load_bundle(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  NormStats stats{ckpt.norm_mean, ckpt.norm_std};
  RngStream dummy(0);
  ModelBundle b = build_classifier(parse_arch_id(ckpt.arch_id), ckpt.n_classes, stats, dummy,
                                   {ckpt.input_h, ckpt.input_w, ckpt.input_c});
  unpack_network(ckpt, b.net);
  return b;
}

// ---------------------------------------------------------------------------
// Generators

SampleGenerator build_sample_generator(int latent_dim, std::array<int, 3> out_size,
                                       RngStream& init_rng, bool allow_toy,
                                       int toy_base_channels) {
  const int h = out_size[0], w = out_size[1], c = out_size[2];
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  const bool standard = (h == 32 && w == 32 && c == 3) || (h == 64 && w == 64 && c == 3);
  if (!standard && !allow_toy)
    throw ConfigError("unsupported sample-generator output size " + std::to_string(h) + "x" +
                      std::to_string(w) + "x" + std::to_string(c));
  if (h % 4 != 0 || w % 4 != 0)
    throw ConfigError("sample-generator output size must be divisible by 4");

  SampleGenerator g;
  g.latent_dim = latent_dim;
  g.out_size = out_size;
  g.base_channels = standard ? 128 : toy_base_channels;

  const int base = g.base_channels;
  // The 64x64 variant has three upsample stages, the others two.
  const int div = standard && h == 64 ? 8 : 4;
  const int h0 = h / div, w0 = w / div;
  g.net.add<Dense>("fc", latent_dim, h0 * w0 * base);
  g.net.add<ReshapeToImage>("reshape", h0, w0, base);
  g.net.add<BatchNorm>("bn0", base);
  g.net.add<UpsampleNearest2x>("up1");
  g.net.add<Conv2d>("conv1", base, base, 3, 1, 1);
  g.net.add<BatchNorm>("bn1", base);
  g.net.add<LeakyReLU>("lrelu1", 0.2f);
  g.net.add<UpsampleNearest2x>("up2");
  if (standard && h == 64) {
    // The 64x64 variant carries one extra upsample block.
    g.net.add<Conv2d>("conv1b", base, base, 3, 1, 1);
    g.net.add<BatchNorm>("bn1b", base);
    g.net.add<LeakyReLU>("lrelu1b", 0.2f);
    g.net.add<UpsampleNearest2x>("up3");
  }
  const int mid = base / 2;
  g.net.add<Conv2d>("conv2", base, mid, 3, 1, 1);
  g.net.add<BatchNorm>("bn2", mid);
  g.net.add<LeakyReLU>("lrelu2", 0.2f);
  g.net.add<Conv2d>("conv3", mid, c, 3, 1, 1);
  g.net.add<Sigmoid>("sigmoid");
  // Non-affine final BN: batch outputs are standardized per channel, matching
  // what normalized training data looks like to the classifiers.
  g.net.add<BatchNorm>("bn_out", c, /*affine=*/false);
  init_he_normal(g.net, init_rng);
  return g;
}

TriggerGenerator build_trigger_generator(int latent_dim, int h, int w, float scale,
                                         RngStream& init_rng, int channels) {
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (h < 1 || w < 1 || h != w) throw ConfigError("trigger patches are square and positive");
  if (!(scale > 0.0f && scale <= 1.0f)) throw ConfigError("trigger scale must be in (0, 1]");

  TriggerGenerator g;
  g.latent_dim = latent_dim;
  g.patch_h = h;
  g.patch_w = w;
  g.channels = channels;
  g.scale = scale;

  if (h <= 8) {
    // Small patches: FC -> reshape -> BN, then a single 3x3 conv head.
    g.net.add<Dense>("fc", latent_dim, h * w * 64);
    g.net.add<ReshapeToImage>("reshape", h, w, 64);
    g.net.add<BatchNorm>("bn0", 64);
    g.net.add<Conv2d>("conv_out", 64, channels, 3, 1, 1);
    g.net.add<BatchNorm>("bn_out", channels);
    g.net.add<Tanh>("tanh");
  } else if (h <= 16) {
    if (h % 2 != 0) throw ConfigError("trigger size above 8 must be even");
    const int h0 = h / 2;
    g.net.add<Dense>("fc", latent_dim, h0 * h0 * 128);
    g.net.add<ReshapeToImage>("reshape", h0, h0, 128);
    g.net.add<BatchNorm>("bn0", 128);
    g.net.add<UpsampleNearest2x>("up1");
    g.net.add<Conv2d>("conv1", 128, 64, 3, 1, 1);
    g.net.add<BatchNorm>("bn1", 64);
    g.net.add<LeakyReLU>("lrelu1", 0.2f);
    g.net.add<Conv2d>("conv_out", 64, channels, 3, 1, 1);
    g.net.add<BatchNorm>("bn_out", channels);
    g.net.add<Tanh>("tanh");
  } else {
    if (h % 4 != 0) throw ConfigError("trigger size above 16 must be divisible by 4");
    const int h0 = h / 4;
    g.net.add<Dense>("fc", latent_dim, h0 * h0 * 128);
    g.net.add<ReshapeToImage>("reshape", h0, h0, 128);
    g.net.add<BatchNorm>("bn0", 128);
    g.net.add<UpsampleNearest2x>("up1");
    g.net.add<Conv2d>("conv1", 128, 128, 3, 1, 1);
    g.net.add<BatchNorm>("bn1", 128);
    g.net.add<LeakyReLU>("lrelu1", 0.2f);
    g.net.add<UpsampleNearest2x>("up2");
    g.net.add<Conv2d>("conv2", 128, 64, 3, 1, 1);
    g.net.add<BatchNorm>("bn2", 64);
    g.net.add<LeakyReLU>("lrelu2", 0.2f);
    g.net.add<Conv2d>("conv_out", 64, channels, 3, 1, 1);
    g.net.add<BatchNorm>("bn_out", channels);
    g.net.add<Tanh>("tanh");
  }
  g.net.add<ConstScale>("scale", scale);
  init_he_normal(g.net, init_rng);
  return g;
}

void save_sample_generator(SampleGenerator& g, const std::string& path) {
  Checkpoint ckpt;
  ckpt.arch_id = "sample-generator";
  ckpt.n_classes = 0;
  ckpt.input_h = g.out_size[0];
  ckpt.input_w = g.out_size[1];
  ckpt.input_c = g.out_size[2];
  ckpt.attrs["latent_dim"] = g.latent_dim;
  ckpt.attrs["base_channels"] = g.base_channels;
  pack_network(ckpt, g.net);
  save_checkpoint(ckpt, path);
}

SampleGenerator load_sample_generator(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.arch_id != "sample-generator")
    throw IngestionError("not a sample-generator checkpoint: " + path);
  RngStream dummy(0);
  SampleGenerator g = build_sample_generator(
      static_cast<int>(ckpt.attrs.at("latent_dim")),
      {ckpt.input_h, ckpt.input_w, ckpt.input_c}, dummy, /*allow_toy=*/true,
      static_cast<int>(ckpt.attrs.at("base_channels")));
  unpack_network(ckpt, g.net);
  return g;
}

void save_trigger_generator(TriggerGenerator& g, const std::string& path) {
  Checkpoint ckpt;
  ckpt.arch_id = "trigger-generator";
  ckpt.n_classes = 0;
  ckpt.input_h = g.patch_h;
  ckpt.input_w = g.patch_w;
  ckpt.input_c = g.channels;
  ckpt.attrs["latent_dim"] = g.latent_dim;
  ckpt.attrs["scale"] = g.scale;
  pack_network(ckpt, g.net);
  save_checkpoint(ckpt, path);
}

TriggerGenerator load_trigger_generator(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.arch_id != "trigger-generator")
    throw IngestionError("not a trigger-generator checkpoint: " + path);
  RngStream dummy(0);
  TriggerGenerator g = build_trigger_generator(
      static_cast<int>(ckpt.attrs.at("latent_dim")), ckpt.input_h, ckpt.input_w,
      static_cast<float>(ckpt.attrs.at("scale")), dummy, ckpt.input_c);
  unpack_network(ckpt, g.net);
  return g;
}

Tensor sample_latent(int batch_size, int latent_dim, RngStream& rng) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  Tensor z({batch_size, latent_dim});
  rng.fill_normal(z);
  return z;
}

}  // namespace dhbe
