#include "dhbe/serialize.hpp"

#include <cstring>
#include <fstream>

namespace dhbe {

namespace {

constexpr char kMagic[8] = {'D', 'H', 'B', 'E', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_i32(std::ostream& os, int32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_floats(std::ostream& os, const float* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
}

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
int32_t get_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string get_str(std::istream& is) {
  const uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, Checkpoint::kFormatVersion);
  put_str(os, ckpt.arch_id);
  put_i32(os, ckpt.n_classes);
  put_i32(os, ckpt.input_h);
  put_i32(os, ckpt.input_w);
  put_i32(os, ckpt.input_c);
  put_u32(os, static_cast<uint32_t>(ckpt.norm_mean.size()));
  put_floats(os, ckpt.norm_mean.data(), ckpt.norm_mean.size());
  put_floats(os, ckpt.norm_std.data(), ckpt.norm_std.size());
  put_u32(os, static_cast<uint32_t>(ckpt.attrs.size()));
  for (const auto& [k, v] : ckpt.attrs) {
    put_str(os, k);
    put_f64(os, v);
  }
  put_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(os, name);
    put_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) put_i32(os, t.dim(d));
    put_floats(os, t.data(), static_cast<size_t>(t.size()));
  }
  if (!os) throw IngestionError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IngestionError("not a checkpoint file: " + path);
  const uint32_t version = get_u32(is);
  if (version != Checkpoint::kFormatVersion)
    throw IngestionError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.arch_id = get_str(is);
  ckpt.n_classes = get_i32(is);
  ckpt.input_h = get_i32(is);
  ckpt.input_w = get_i32(is);
  ckpt.input_c = get_i32(is);
  const uint32_t nc = get_u32(is);
  ckpt.norm_mean.resize(nc);
  ckpt.norm_std.resize(nc);
  is.read(reinterpret_cast<char*>(ckpt.norm_mean.data()), nc * sizeof(float));
  is.read(reinterpret_cast<char*>(ckpt.norm_std.data()), nc * sizeof(float));
  const uint32_t na = get_u32(is);
  for (uint32_t i = 0; i < na; ++i) {
    std::string k = get_str(is);
    ckpt.attrs[k] = get_f64(is);
  }
  const uint32_t nt = get_u32(is);
  for (uint32_t i = 0; i < nt; ++i) {
    std::string name = get_str(is);
    const uint32_t ndim = get_u32(is);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = get_i32(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!is) throw IngestionError("truncated checkpoint: " + path);
  return ckpt;
}

}  // namespace dhbe
