#pragma once

// Counter-based random number generation. Every consumer of randomness in the
// pipeline derives values from a RandomStream keyed by (seed, purpose, index,
// aux), so draws are random-access, order-independent, and reproducible
// regardless of batch layout or thread count.

#include <cmath>
#include <cstdint>
#include <span>

namespace smoothcert {

// Philox4x32-10 block function (Salmon et al. counter-based generator).
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  struct Block {
    std::uint32_t x[4];
  };

  static Block generate(std::uint32_t k0, std::uint32_t k1, std::uint32_t c0,
                        std::uint32_t c1, std::uint32_t c2, std::uint32_t c3) {
    std::uint32_t s0 = c0, s1 = c1, s2 = c2, s3 = c3;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * s0;
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * s2;
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      s0 = hi1 ^ s1 ^ k0;
      s1 = lo1;
      s2 = hi0 ^ s3 ^ k1;
      s3 = lo0;
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
    return Block{{s0, s1, s2, s3}};
  }
};

/// Disjoint substream selectors. Distinct purposes map to distinct Philox
/// counters by construction, never by hashing.
enum class StreamPurpose : std::uint32_t {
  train_noise = 0,
  certify_select = 1,
  certify_estimate = 2,
  param_init = 3,
  data_gen = 4,
  eval_noise = 5,
  shuffle = 6,
  gradcheck_pick = 7,
};

/// Random-access stream of uniforms and standard normals.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint32_t index = 0,
               std::uint32_t aux = 0)
      : k0_(static_cast<std::uint32_t>(seed)),
        k1_(static_cast<std::uint32_t>(seed >> 32)),
        c2_(index),
        c3_((static_cast<std::uint32_t>(purpose) << 24) | (aux & 0x00FFFFFFu)) {}

  /// i-th uniform double in the open interval (0, 1).
  double uniform(std::uint64_t i) const {
    const Philox4x32::Block b = block(i >> 1);
    return to_unit(word64(b, static_cast<int>(i & 1)));
  }

  std::uint64_t raw64(std::uint64_t i) const {
    const Philox4x32::Block b = block(i >> 1);
    return word64(b, static_cast<int>(i & 1));
  }

  /// i-th standard normal deviate (Box-Muller over consecutive pairs).
  double normal(std::uint64_t i) const {
    const Philox4x32::Block b = block(i >> 1);
    double z0, z1;
    box_muller(b, z0, z1);
    return (i & 1) ? z1 : z0;
  }

  /// Fills out[j] with normal(start + j); identical values to normal() at the
  /// same indices, computed block-wise.
  void fill_normal(std::uint64_t start, std::span<double> out) const {
    std::size_t j = 0;
    while (j < out.size()) {
      const std::uint64_t i = start + j;
      const Philox4x32::Block b = block(i >> 1);
      double z0, z1;
      box_muller(b, z0, z1);
      if ((i & 1) == 0) {
        out[j++] = z0;
        if (j < out.size()) out[j++] = z1;
      } else {
        out[j++] = z1;
      }
    }
  }

 private:
  Philox4x32::Block block(std::uint64_t blk) const {
    return Philox4x32::generate(k0_, k1_, static_cast<std::uint32_t>(blk),
                                static_cast<std::uint32_t>(blk >> 32), c2_, c3_);
  }

  static double to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  static std::uint64_t word64(const Philox4x32::Block& b, int j) {
    return (static_cast<std::uint64_t>(b.x[2 * j + 1]) << 32) | b.x[2 * j];
  }

  static void box_muller(const Philox4x32::Block& b, double& z0, double& z1) {
    constexpr double kTwoPi = 6.28318530717958647693;
    const double u1 = to_unit(word64(b, 0));
    const double u2 = to_unit(word64(b, 1));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = kTwoPi * u2;
    z0 = r * std::cos(t);
    z1 = r * std::sin(t);
  }

  std::uint32_t k0_, k1_, c2_, c3_;
};

}  // namespace smoothcert
