#pragma once

// Desk-scale datasets: seeded synthetic 2-D generators and an MNIST IDX
// reader/writer. Noise is always added in raw input coordinates; any
// normalization lives inside the model (see DenseNet), never here.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace smoothcert {

enum class Split : std::uint32_t { train = 0, test = 1 };

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
  bool applied_after_noise = true;

  bool is_identity() const { return mean.empty(); }
};

struct Dataset {
  int dim = 0;
  std::vector<double> inputs;  // size() x dim, row-major
  std::vector<int> labels;
  Split split = Split::train;
  Normalization normalization;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::span<const double> input(std::int64_t i) const {
    return {inputs.data() + i * dim, static_cast<std::size_t>(dim)};
  }
  int num_classes() const {
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    return k;
  }
};

/// Two interleaving half-circles of radius 1 with Gaussian jitter. Class 0
/// lies on the upper arc, class 1 on the lower shifted arc; classes balanced
/// to within one example. Deterministic per (seed, split).
inline Dataset gen_two_moons(std::int64_t n, double noise_std, std::uint64_t seed,
                             Split split = Split::train) {
  if (n < 2) throw std::invalid_argument("gen_two_moons: need n >= 2");
  Dataset ds;
  ds.dim = 2;
  ds.split = split;
  ds.inputs.resize(static_cast<std::size_t>(n) * 2);
  ds.labels.resize(n);
  const std::int64_t n0 = (n + 1) / 2;
  const std::int64_t n1 = n - n0;
  constexpr double kPi = 3.14159265358979323846;
  RandomStream rs(seed, StreamPurpose::data_gen, 0, static_cast<std::uint32_t>(split));
  std::uint64_t t = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double px, py;
    int label;
    if (i < n0) {
      const double theta = n0 > 1 ? kPi * static_cast<double>(i) / (n0 - 1) : 0.0;
      px = std::cos(theta);
      py = std::sin(theta);
      label = 0;
    } else {
      const std::int64_t j = i - n0;
      const double theta = n1 > 1 ? kPi * static_cast<double>(j) / (n1 - 1) : 0.0;
      px = 1.0 - std::cos(theta);
      py = 0.5 - std::sin(theta);
      label = 1;
    }
    ds.inputs[i * 2 + 0] = px + noise_std * rs.normal(t++);
    ds.inputs[i * 2 + 1] = py + noise_std * rs.normal(t++);
    ds.labels[i] = label;
  }
  return ds;
}

/// K isotropic Gaussian clusters around the given centers, assigned
/// round-robin. The Bayes classifier is the nearest-center rule.
inline Dataset gen_gaussian_blobs(std::int64_t n, const std::vector<std::vector<double>>& centers,
                                  double std_dev, std::uint64_t seed,
                                  Split split = Split::train) {
  if (centers.empty()) throw std::invalid_argument("gen_gaussian_blobs: need centers");
  const int d = static_cast<int>(centers.front().size());
  for (const auto& c : centers) {
    if (static_cast<int>(c.size()) != d) {
      throw std::invalid_argument("gen_gaussian_blobs: center dimensions differ");
    }
  }
  Dataset ds;
  ds.dim = d;
  ds.split = split;
  ds.inputs.resize(static_cast<std::size_t>(n) * d);
  ds.labels.resize(n);
  RandomStream rs(seed, StreamPurpose::data_gen, 1, static_cast<std::uint32_t>(split));
  std::uint64_t t = 0;
  const int k = static_cast<int>(centers.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % k);
    for (int j = 0; j < d; ++j) {
      ds.inputs[i * d + j] = centers[label][j] + std_dev * rs.normal(t++);
    }
    ds.labels[i] = label;
  }
  return ds;
}

namespace detail {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("IDX: truncated file while reading " + what);
  }
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Parses the big-endian IDX pair (image magic 0x803, label magic 0x801),
/// scales pixels from 0-255 to [0, 1], and flattens rows x cols inputs.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("IDX: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("IDX: cannot open " + labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, "image magic");
  if (img_magic != detail::kIdxImageMagic) {
    throw std::runtime_error("IDX: bad image magic in " + images_path);
  }
  const std::uint32_t lab_magic = detail::read_be32(lab, "label magic");
  if (lab_magic != detail::kIdxLabelMagic) {
    throw std::runtime_error("IDX: bad label magic in " + labels_path);
  }
  const std::uint32_t n_images = detail::read_be32(img, "image count");
  const std::uint32_t rows = detail::read_be32(img, "rows");
  const std::uint32_t cols = detail::read_be32(img, "cols");
  const std::uint32_t n_labels = detail::read_be32(lab, "label count");
  if (n_images != n_labels) {
    throw std::runtime_error("IDX: image/label count mismatch");
  }

  Dataset ds;
  ds.dim = static_cast<int>(rows * cols);
  ds.split = Split::test;
  ds.inputs.resize(static_cast<std::size_t>(n_images) * ds.dim);
  ds.labels.resize(n_images);

  std::vector<unsigned char> buf(static_cast<std::size_t>(n_images) * ds.dim);
  if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error("IDX: truncated image data in " + images_path);
  }
  for (std::size_t i = 0; i < buf.size(); ++i) ds.inputs[i] = buf[i] / 255.0;

  std::vector<unsigned char> lbuf(n_images);
  if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()))) {
    throw std::runtime_error("IDX: truncated label data in " + labels_path);
  }
  for (std::uint32_t i = 0; i < n_images; ++i) ds.labels[i] = lbuf[i];
  return ds;
}

/// Writes a dataset back to the IDX pair, bit-exact: pixel values are
/// expected on the [0, 1] grid produced by load_mnist_idx.
inline void save_mnist_idx(const Dataset& ds, const std::string& images_path,
                           const std::string& labels_path, std::uint32_t rows = 28,
                           std::uint32_t cols = 28) {
  if (static_cast<std::uint32_t>(ds.dim) != rows * cols) {
    throw std::invalid_argument("save_mnist_idx: dim must equal rows * cols");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("IDX: cannot write " + images_path);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("IDX: cannot write " + labels_path);
  const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
  detail::write_be32(img, detail::kIdxImageMagic);
  detail::write_be32(img, n);
  detail::write_be32(img, rows);
  detail::write_be32(img, cols);
  std::vector<unsigned char> buf(ds.inputs.size());
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(ds.inputs[i] * 255.0));
  }
  img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  detail::write_be32(lab, detail::kIdxLabelMagic);
  detail::write_be32(lab, n);
  for (int l : ds.labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
}

/// First-k subset, preserving order.
inline Dataset dataset_head(const Dataset& ds, std::int64_t k) {
  if (k <= 0 || k > ds.size()) throw std::invalid_argument("dataset_head: bad subset size");
  Dataset out;
  out.dim = ds.dim;
  out.split = ds.split;
  out.normalization = ds.normalization;
  out.inputs.assign(ds.inputs.begin(), ds.inputs.begin() + k * ds.dim);
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + k);
  return out;
}

}  // namespace smoothcert
