#pragma once

// The smoothed classifier and the two-round Monte-Carlo CERTIFY procedure
// producing abstain-or-certify decisions with certified l2 radii.

#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"
#include "statcore.hpp"

namespace smoothcert {

/// Monte-Carlo certification parameters.
struct CertifyConfig {
  double sigma = 0.25;
  std::int64_t n0 = 100;      // selection samples
  std::int64_t n = 100000;    // estimation samples
  double alpha = 0.001;       // failure rate
  std::uint64_t seed = 0;
  int batch_size = 1000;      // noise vectors evaluated per batch

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("certify: sigma must be > 0");
    if (n0 < 1) throw std::invalid_argument("certify: n0 must be >= 1");
    if (n < 1) throw std::invalid_argument("certify: n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("certify: alpha must lie in (0, 1)");
    if (batch_size < 1) throw std::invalid_argument("certify: batch_size must be >= 1");
  }
};

inline constexpr int kAbstain = -1;

/// Outcome of CERTIFY: a predicted class with a certified radius, or
/// abstention (radius 0).
struct CertResult {
  int prediction = kAbstain;
  double radius = 0.0;
  double p1_lower = 0.0;
  std::vector<std::int64_t> counts;  // estimation-round tallies
};

/// Draws n_samples of x + sigma * z with z from the given stream and tallies
/// the classifier's argmax prediction per class. Generic over any callable
/// mapping an input vector to a class index.
template <class Classifier>
std::vector<std::int64_t> smoothed_predict_counts(Classifier&& clf, std::span<const double> x,
                                                  int num_classes, double sigma,
                                                  std::int64_t n_samples,
                                                  const RandomStream& stream) {
  if (n_samples < 1) throw std::invalid_argument("smoothed_predict_counts: n_samples >= 1");
  const int d = static_cast<int>(x.size());
  std::vector<std::int64_t> counts(num_classes, 0);
  Vector noisy(d);
  for (std::int64_t j = 0; j < n_samples; ++j) {
    stream.fill_normal(static_cast<std::uint64_t>(j) * d, noisy);
    for (int i = 0; i < d; ++i) noisy[i] = x[i] + sigma * noisy[i];
    const int c = clf(std::span<const double>(noisy));
    if (c < 0 || c >= num_classes) {
      throw std::out_of_range("smoothed_predict_counts: classifier returned bad class");
    }
    ++counts[c];
  }
  return counts;
}

/// DenseNet fast path: batched noise generation and logits evaluation.
inline std::vector<std::int64_t> smoothed_predict_counts(const DenseNet& net,
                                                         std::span<const double> x,
                                                         double sigma, std::int64_t n_samples,
                                                         const RandomStream& stream,
                                                         int batch_size = 1000) {
  if (n_samples < 1) throw std::invalid_argument("smoothed_predict_counts: n_samples >= 1");
  const int d = net.input_dim();
  const int num_k = net.num_classes();
  std::vector<std::int64_t> counts(num_k, 0);
  BatchForward bf(net, batch_size);
  std::vector<double> xs(static_cast<std::size_t>(batch_size) * d);
  std::vector<double> logits(static_cast<std::size_t>(batch_size) * num_k);
  for (std::int64_t start = 0; start < n_samples; start += batch_size) {
    const int b = static_cast<int>(std::min<std::int64_t>(batch_size, n_samples - start));
    std::span<double> block(xs.data(), static_cast<std::size_t>(b) * d);
    stream.fill_normal(static_cast<std::uint64_t>(start) * d, block);
    for (int r = 0; r < b; ++r) {
      double* row = xs.data() + static_cast<std::size_t>(r) * d;
      for (int i = 0; i < d; ++i) row[i] = x[i] + sigma * row[i];
    }
    bf.run(xs.data(), b, logits.data());
    for (int r = 0; r < b; ++r) {
      const double* row = logits.data() + static_cast<std::size_t>(r) * num_k;
      ++counts[argmax_index(std::span<const double>(row, num_k))];
    }
  }
  return counts;
}

/// Decision stage of CERTIFY, given the tallies of both rounds. Abstains at
/// p1_lower <= 1/2 (the boundary is non-certifying); otherwise certifies
/// radius sigma * Quantile(p1_lower).
inline CertResult certify_from_counts(const std::vector<std::int64_t>& selection_counts,
                                      std::vector<std::int64_t> estimation_counts,
                                      const CertifyConfig& cfg) {
  int c_hat = 0;
  for (int k = 1; k < static_cast<int>(selection_counts.size()); ++k) {
    if (selection_counts[k] > selection_counts[c_hat]) c_hat = k;
  }
  const std::int64_t n = std::accumulate(estimation_counts.begin(), estimation_counts.end(),
                                         std::int64_t{0});
  const std::int64_t k = estimation_counts[c_hat];
  const double p1 = clopper_pearson_lower(k, n, cfg.alpha);
  CertResult res;
  res.p1_lower = p1;
  res.counts = std::move(estimation_counts);
  if (p1 <= 0.5) {
    return res;  // abstain: a zero-radius certificate is vacuous
  }
  res.prediction = c_hat;
  res.radius = cfg.sigma * std_normal_quantile(p1);
  return res;
}

/// Full CERTIFY on a generic base classifier. Selection and estimation rounds
/// draw from disjoint RNG substreams keyed by the example index.
template <class Classifier>
CertResult certify_with(Classifier&& clf, int num_classes, std::span<const double> x,
                        const CertifyConfig& cfg, std::uint32_t example_index) {
  cfg.validate();
  RandomStream select(cfg.seed, StreamPurpose::certify_select, example_index);
  RandomStream estimate(cfg.seed, StreamPurpose::certify_estimate, example_index);
  const std::vector<std::int64_t> counts0 =
      smoothed_predict_counts(clf, x, num_classes, cfg.sigma, cfg.n0, select);
  std::vector<std::int64_t> counts =
      smoothed_predict_counts(clf, x, num_classes, cfg.sigma, cfg.n, estimate);
  return certify_from_counts(counts0, std::move(counts), cfg);
}

/// Full CERTIFY on a DenseNet base classifier (batched evaluation).
inline CertResult certify(const DenseNet& net, std::span<const double> x,
                          const CertifyConfig& cfg, std::uint32_t example_index) {
  cfg.validate();
  RandomStream select(cfg.seed, StreamPurpose::certify_select, example_index);
  RandomStream estimate(cfg.seed, StreamPurpose::certify_estimate, example_index);
  const std::vector<std::int64_t> counts0 =
      smoothed_predict_counts(net, x, cfg.sigma, cfg.n0, select, cfg.batch_size);
  std::vector<std::int64_t> counts =
      smoothed_predict_counts(net, x, cfg.sigma, cfg.n, estimate, cfg.batch_size);
  return certify_from_counts(counts0, std::move(counts), cfg);
}

/// Two-sided certified radius (sigma/2) * (Quantile(p1) - Quantile(p2)); the
/// one-sided bound equals this at p2 = 1 - p1.
inline double certified_radius_two_sided(double p1, double p2, double sigma) {
  if (!(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0)) {
    throw std::domain_error("certified_radius_two_sided: p1, p2 must lie in (0, 1)");
  }
  if (p1 < p2) throw std::domain_error("certified_radius_two_sided: need p1 >= p2");
  if (p1 + p2 > 1.0) throw std::domain_error("certified_radius_two_sided: need p1 + p2 <= 1");
  return (sigma / 2.0) * (std_normal_quantile(p1) - std_normal_quantile(p2));
}

/// Largest radius CERTIFY can output for the given configuration, attained
/// when all n estimation samples agree.
inline double certify_radius_cap(const CertifyConfig& cfg) {
  return cfg.sigma * std_normal_quantile(std::pow(cfg.alpha, 1.0 / static_cast<double>(cfg.n)));
}

}  // namespace smoothcert
