#include "bevforge/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bevforge {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
  out.write(Checkpoint::kMagic, 5);
  put_u32(out, Checkpoint::kVersion);
  put_string(out, ckpt.config_json);

  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }

  if (ckpt.velocities.size() != ckpt.params.size())
    throw IoError("checkpoint: velocity table must align with parameters");
  for (const auto& v : ckpt.velocities) {
    put_u64(out, v.size());
    for (double x : v) put_f64(out, x);
  }

  put_string(out, ckpt.rng_state);
  put_u32(out, ckpt.epoch);
  put_u64(out, ckpt.step);
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, Checkpoint::kMagic, 5) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(in);
  if (version != Checkpoint::kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_json = get_string(in);
  const std::uint32_t n_params = get_u32(in);
  ckpt.params.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = get_string(in);
    const std::uint32_t rank = get_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(in));
    int numel = 1;
    for (int d : shape) numel *= d;
    std::vector<double> data(numel);
    for (double& v : data) v = get_f64(in);
    ckpt.params.emplace_back(std::move(name),
                             Tensor::from_data(std::move(shape), std::move(data), true));
  }
  ckpt.velocities.resize(n_params);
  for (auto& v : ckpt.velocities) {
    v.resize(get_u64(in));
    for (double& x : v) x = get_f64(in);
  }
  ckpt.rng_state = get_string(in);
  ckpt.epoch = get_u32(in);
  ckpt.step = get_u64(in);
  if (!in) throw IoError("checkpoint: truncated file " + path);
  return ckpt;
}

}  // namespace bevforge
