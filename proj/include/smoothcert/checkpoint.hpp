#pragma once

// Model checkpoint file: versioned header (magic, format version, layer dims,
// activation, training sigma), optional layer-zero normalization, parameters
// in layer order as row-major little-endian 64-bit floats, then the run
// configuration text. Round-trips bit-exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "nn.hpp"

namespace smoothcert {

inline constexpr char kCheckpointMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '0', '0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.write(b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.write(b, 8);
}

inline void write_f64(std::ostream& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.write(b, 8);
}

inline std::uint32_t read_u32(std::istream& in) {
  char b[4];
  if (!in.read(b, 4)) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  char b[8];
  if (!in.read(b, 8)) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v;
  std::memcpy(&v, b, 8);
  return v;
}

inline double read_f64(std::istream& in) {
  char b[8];
  if (!in.read(b, 8)) throw std::runtime_error("checkpoint: truncated file");
  double v;
  std::memcpy(&v, b, 8);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const DenseNet& net,
                            const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(net.activation));
  detail::write_f64(out, net.train_sigma);
  detail::write_u32(out, static_cast<std::uint32_t>(net.layer_dims.size()));
  for (int d : net.layer_dims) detail::write_u32(out, static_cast<std::uint32_t>(d));
  const std::uint32_t has_norm = net.has_normalization() ? 1 : 0;
  detail::write_u32(out, has_norm);
  if (has_norm) {
    for (double v : net.input_mean) detail::write_f64(out, v);
    for (double v : net.input_std) detail::write_f64(out, v);
  }
  for (int l = 0; l < net.num_layers(); ++l) {
    for (double v : net.weights[l].data) detail::write_f64(out, v);
    for (double v : net.biases[l]) detail::write_f64(out, v);
  }
  detail::write_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct Checkpoint {
  DenseNet net;
  std::string config_text;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version in " + path);
  }
  Checkpoint ck;
  ck.net.activation = static_cast<Activation>(detail::read_u32(in));
  ck.net.train_sigma = detail::read_f64(in);
  const std::uint32_t n_dims = detail::read_u32(in);
  if (n_dims < 2 || n_dims > 1024) throw std::runtime_error("checkpoint: bad layer count");
  ck.net.layer_dims.resize(n_dims);
  for (std::uint32_t i = 0; i < n_dims; ++i) {
    ck.net.layer_dims[i] = static_cast<int>(detail::read_u32(in));
  }
  const std::uint32_t has_norm = detail::read_u32(in);
  if (has_norm) {
    const int d = ck.net.layer_dims.front();
    ck.net.input_mean.resize(d);
    ck.net.input_std.resize(d);
    for (double& v : ck.net.input_mean) v = detail::read_f64(in);
    for (double& v : ck.net.input_std) v = detail::read_f64(in);
  }
  for (std::uint32_t l = 0; l + 1 < n_dims; ++l) {
    const int rows = ck.net.layer_dims[l + 1];
    const int cols = ck.net.layer_dims[l];
    Matrix w(rows, cols);
    for (double& v : w.data) v = detail::read_f64(in);
    Vector b(rows);
    for (double& v : b) v = detail::read_f64(in);
    ck.net.weights.push_back(std::move(w));
    ck.net.biases.push_back(std::move(b));
  }
  const std::uint64_t len = detail::read_u64(in);
  ck.config_text.resize(len);
  if (len > 0 && !in.read(ck.config_text.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error("checkpoint: truncated config text in " + path);
  }
  return ck;
}

}  // namespace smoothcert
