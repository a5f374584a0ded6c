#pragma once

// Single-threaded deterministic training loop: per-epoch shuffling, fresh
// noise draws keyed by (seed, example, epoch), in-order gradient
// accumulation, and the SGD/Nesterov schedule.

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "data.hpp"
#include "losses.hpp"
#include "nn.hpp"

namespace smoothcert {

struct EpochLogRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double clean_acc = 0.0;
  double noisy_acc = 0.0;
};

struct TrainResult {
  DenseNet net;
  std::vector<EpochLogRow> log;
};

namespace detail {

inline double clean_accuracy(const DenseNet& net, const Dataset& ds) {
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const Vector logits = forward_logits(net, ds.input(i));
    if (argmax_index(logits) == ds.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

inline double noisy_accuracy(const DenseNet& net, const Dataset& ds, double sigma,
                             std::uint64_t seed, std::uint32_t epoch) {
  std::int64_t hits = 0;
  Vector noisy(ds.dim);
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    RandomStream rs(seed, StreamPurpose::eval_noise, static_cast<std::uint32_t>(i), epoch);
    rs.fill_normal(0, noisy);
    const std::span<const double> x = ds.input(i);
    for (int j = 0; j < ds.dim; ++j) noisy[j] = x[j] + sigma * noisy[j];
    const Vector logits = forward_logits(net, noisy);
    if (argmax_index(logits) == ds.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

inline std::vector<std::int64_t> shuffled_indices(std::int64_t n, std::uint64_t seed,
                                                  std::uint32_t epoch) {
  std::vector<std::int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RandomStream rs(seed, StreamPurpose::shuffle, 0, epoch);
  std::uint64_t t = 0;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(rs.raw64(t++) % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace detail

/// Trains a freshly initialized MLP on the dataset with the configured loss.
/// Identical config and seed give bit-identical parameters.
inline TrainResult train_classifier(const Dataset& data, const std::vector<int>& hidden,
                                    Activation act, const TrainConfig& cfg) {
  cfg.validate();
  const int num_classes = data.num_classes();
  std::vector<int> dims;
  dims.push_back(data.dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(num_classes);

  TrainResult result;
  result.net = make_dense_net(dims, act, cfg.optim.seed);
  result.net.train_sigma = cfg.sigma;
  if (!data.normalization.is_identity()) {
    result.net.input_mean = data.normalization.mean;
    result.net.input_std = data.normalization.std;
  }

  const std::int64_t n = data.size();
  SgdState state = make_sgd_state(result.net);
  Gradient batch_grad = zero_gradient_like(result.net);

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const std::vector<std::int64_t> order =
        detail::shuffled_indices(n, cfg.optim.seed, static_cast<std::uint32_t>(epoch));
    double loss_sum = 0.0;
    for (std::int64_t b0 = 0; b0 < n; b0 += cfg.optim.batch_size) {
      const std::int64_t b1 = std::min<std::int64_t>(n, b0 + cfg.optim.batch_size);
      batch_grad.set_zero();
      for (std::int64_t pos = b0; pos < b1; ++pos) {
        const std::int64_t i = order[static_cast<std::size_t>(pos)];
        const NoiseDraw draw =
            make_noise_draw(cfg.optim.seed, static_cast<std::uint32_t>(i),
                            static_cast<std::uint32_t>(epoch), cfg.m, data.dim, cfg.sigma);
        const LossEval ev = compute_loss(result.net, data.input(i),
                                         data.labels[static_cast<std::size_t>(i)], draw, cfg,
                                         epoch);
        loss_sum += ev.loss;
        accumulate_loss_gradient(result.net, ev, batch_grad);
      }
      batch_grad.scale(1.0 / static_cast<double>(b1 - b0));
      sgd_step(result.net, batch_grad, state, cfg.optim, epoch);
    }
    EpochLogRow row;
    row.epoch = epoch;
    row.mean_loss = loss_sum / static_cast<double>(n);
    row.clean_acc = detail::clean_accuracy(result.net, data);
    row.noisy_acc = detail::noisy_accuracy(result.net, data, cfg.sigma, cfg.optim.seed,
                                           static_cast<std::uint32_t>(epoch));
    result.log.push_back(row);
  }
  return result;
}

}  // namespace smoothcert
