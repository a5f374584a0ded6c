#pragma once

// Aggregate metrics over certification runs: certified accuracy at radius
// grids, average certified radius, log-probability-gap distributions, the
// consistency-probability diagnostic, and the CSV formats they ship in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "data.hpp"
#include "nn.hpp"
#include "smoothing.hpp"

namespace smoothcert {

struct CertRow {
  int index = 0;
  int label = 0;
  int prediction = kAbstain;
  double radius = 0.0;
  bool correct = false;
  bool abstained = true;
};

struct EvalMetadata {
  double sigma = 0.0;
  std::int64_t n = 0;
  std::int64_t n0 = 0;
  double alpha = 0.0;
  std::string model_id;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<CertRow> rows;
  double acr = 0.0;
  std::vector<std::pair<double, double>> cert_acc;  // radius -> fraction
  EvalMetadata metadata;
};

inline CertRow make_cert_row(int index, int label, const CertResult& res) {
  CertRow row;
  row.index = index;
  row.label = label;
  row.prediction = res.prediction;
  row.radius = res.radius;
  row.abstained = res.prediction == kAbstain;
  row.correct = !row.abstained && res.prediction == label;
  return row;
}

/// Certifies every example of a dataset; examples are split across threads,
/// each owning its per-example RNG substream, so results are byte-identical
/// for any thread count.
inline std::vector<CertRow> certify_dataset(const DenseNet& net, const Dataset& ds,
                                            const CertifyConfig& cfg, int threads = 1,
                                            std::int64_t start_index = 0) {
  cfg.validate();
  const std::int64_t n = ds.size();
  if (start_index < 0 || start_index > n) {
    throw std::invalid_argument("certify_dataset: bad start index");
  }
  std::vector<CertRow> rows(static_cast<std::size_t>(n - start_index));
  auto work = [&](std::int64_t from, std::int64_t to) {
    for (std::int64_t i = from; i < to; ++i) {
      const CertResult res = certify(net, ds.input(i), cfg, static_cast<std::uint32_t>(i));
      rows[static_cast<std::size_t>(i - start_index)] = make_cert_row(
          static_cast<int>(i), ds.labels[static_cast<std::size_t>(i)], res);
    }
  };
  if (threads <= 1) {
    work(start_index, n);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t total = n - start_index;
    const std::int64_t chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t from = start_index + t * chunk;
      const std::int64_t to = std::min<std::int64_t>(n, from + chunk);
      if (from < to) pool.emplace_back(work, from, to);
    }
    for (std::thread& th : pool) th.join();
  }
  return rows;
}

/// Fraction of rows certified correctly with radius strictly larger than r,
/// for each grid point r.
inline std::vector<std::pair<double, double>> certified_accuracy(
    const std::vector<CertRow>& rows, std::span<const double> radii) {
  for (double r : radii) {
    if (r < 0.0) throw std::invalid_argument("certified_accuracy: radii must be >= 0");
  }
  std::vector<std::pair<double, double>> out;
  out.reserve(radii.size());
  const double n = static_cast<double>(rows.size());
  for (double r : radii) {
    std::int64_t hits = 0;
    for (const CertRow& row : rows) {
      if (row.correct && row.radius > r) ++hits;
    }
    out.emplace_back(r, n > 0 ? hits / n : 0.0);
  }
  return out;
}

/// ACR: mean over all rows of radius * 1[prediction = label]; abstentions and
/// misclassifications contribute zero.
inline double average_certified_radius(const std::vector<CertRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("average_certified_radius: no rows");
  double s = 0.0;
  for (const CertRow& row : rows) {
    if (row.correct) s += row.radius;
  }
  return s / static_cast<double>(rows.size());
}

/// Per-draw output margin log F_y(x+d) - max_{c != y} log F_c(x+d), computed
/// from logits via log-softmax so large gaps do not cancel.
inline std::vector<double> logprob_gap_samples(const DenseNet& net, std::span<const double> x,
                                               int y, double sigma, std::int64_t n_samples,
                                               const RandomStream& stream) {
  if (n_samples < 1) throw std::invalid_argument("logprob_gap_samples: n_samples >= 1");
  const int d = net.input_dim();
  const int num_k = net.num_classes();
  std::vector<double> gaps;
  gaps.reserve(n_samples);
  Vector noisy(d), log_probs, probs;
  for (std::int64_t j = 0; j < n_samples; ++j) {
    stream.fill_normal(static_cast<std::uint64_t>(j) * d, noisy);
    for (int i = 0; i < d; ++i) noisy[i] = x[i] + sigma * noisy[i];
    const Vector logits = forward_logits(net, noisy);
    softmax_from_logits(logits, log_probs, probs);
    double best_other = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < num_k; ++k) {
      if (k != y) best_other = std::max(best_other, log_probs[k]);
    }
    gaps.push_back(log_probs[y] - best_other);
  }
  return gaps;
}

struct ConsistencyProbe {
  double p_hat = 0.0;        // empirical P(f(x+d) = majority class)
  double threshold = 0.0;    // Phi(epsilon / sigma)
  bool below_threshold = false;
  int majority_class = 0;
};

/// Estimates the probability that the base classifier predicts its own
/// majority class under noise, and compares it against Phi(epsilon/sigma).
inline ConsistencyProbe consistency_probability(const DenseNet& net, std::span<const double> x,
                                                double sigma, std::int64_t n_samples,
                                                double epsilon_threshold,
                                                const RandomStream& stream) {
  if (epsilon_threshold < 0.0) {
    throw std::invalid_argument("consistency_probability: epsilon_threshold >= 0");
  }
  const std::vector<std::int64_t> counts =
      smoothed_predict_counts(net, x, sigma, n_samples, stream);
  int c_hat = 0;
  for (int k = 1; k < static_cast<int>(counts.size()); ++k) {
    if (counts[k] > counts[c_hat]) c_hat = k;
  }
  ConsistencyProbe probe;
  probe.majority_class = c_hat;
  probe.p_hat = static_cast<double>(counts[c_hat]) / static_cast<double>(n_samples);
  probe.threshold = std_normal_cdf(epsilon_threshold / sigma);
  probe.below_threshold = probe.p_hat < probe.threshold;
  return probe;
}

struct HistBin {
  double left = 0.0;
  double right = 0.0;
  std::int64_t count = 0;
};

/// Uniform binning over the observed range; a single bin when the range is
/// degenerate.
inline std::vector<HistBin> histogram(std::span<const double> values, int bins = 100) {
  if (values.empty()) throw std::invalid_argument("histogram: no values");
  if (bins < 1) throw std::invalid_argument("histogram: bins >= 1");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mn == mx) {
    return {HistBin{mn, mx, static_cast<std::int64_t>(values.size())}};
  }
  std::vector<HistBin> out(bins);
  const double width = (mx - mn) / bins;
  for (int b = 0; b < bins; ++b) {
    out[b].left = mn + b * width;
    out[b].right = b + 1 == bins ? mx : mn + (b + 1) * width;
  }
  for (double v : values) {
    int b = static_cast<int>((v - mn) / width);
    if (b >= bins) b = bins - 1;
    ++out[b].count;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV formats. Every artifact starts with the run configuration embedded as
// '#'-prefixed comment lines, so a run is reconstructible from any output.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_config_comment(std::ostream& out, const std::string& config_text) {
  std::istringstream in(config_text);
  std::string line;
  while (std::getline(in, line)) {
    out << "# " << line << "\n";
  }
}

inline std::string format_radius(double r) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", r);
  return buf;
}

}  // namespace detail

inline constexpr const char* kCertCsvHeader = "index,label,prediction,radius,correct,abstained";

inline void write_cert_csv(const std::string& path, const std::vector<CertRow>& rows,
                           const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  detail::write_config_comment(out, config_text);
  out << kCertCsvHeader << "\n";
  for (const CertRow& row : rows) {
    out << row.index << ',' << row.label << ',';
    if (row.abstained) {
      out << "ABSTAIN";
    } else {
      out << row.prediction;
    }
    out << ',' << detail::format_radius(row.radius) << ',' << (row.correct ? 1 : 0) << ','
        << (row.abstained ? 1 : 0) << "\n";
  }
}

struct CertCsv {
  std::string header_block;  // the '#' comment lines, verbatim
  std::vector<CertRow> rows;
};

inline CertCsv read_cert_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  CertCsv csv;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      csv.header_block += line;
      csv.header_block += '\n';
      continue;
    }
    if (!saw_header) {
      if (line != kCertCsvHeader) {
        throw std::runtime_error("malformed certification CSV header in " + path);
      }
      saw_header = true;
      continue;
    }
    CertRow row;
    std::istringstream ls(line);
    std::string field;
    auto next = [&](const char* what) {
      if (!std::getline(ls, field, ',')) {
        throw std::runtime_error(std::string("malformed certification CSV: missing ") + what);
      }
      return field;
    };
    try {
      row.index = std::stoi(next("index"));
      row.label = std::stoi(next("label"));
      const std::string pred = next("prediction");
      row.prediction = pred == "ABSTAIN" ? kAbstain : std::stoi(pred);
      row.radius = std::stod(next("radius"));
      row.correct = std::stoi(next("correct")) != 0;
      row.abstained = std::stoi(next("abstained")) != 0;
    } catch (const std::logic_error&) {
      throw std::runtime_error("malformed certification CSV row in " + path + ": " + line);
    }
    csv.rows.push_back(row);
  }
  if (!saw_header) throw std::runtime_error("certification CSV has no header: " + path);
  return csv;
}

/// Summary rows: acr plus cert_acc@r for each grid point.
inline void write_summary_csv(const std::string& path, double acr,
                              const std::vector<std::pair<double, double>>& cert_acc,
                              const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  detail::write_config_comment(out, config_text);
  out << "metric,value\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "acr,%.10f\n", acr);
  out << buf;
  for (const auto& [r, acc] : cert_acc) {
    std::snprintf(buf, sizeof(buf), "cert_acc@%.2f,%.6f\n", r, acc);
    out << buf;
  }
}

inline void write_histogram_csv(const std::string& path, const std::vector<HistBin>& bins,
                                const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  detail::write_config_comment(out, config_text);
  out << "bin_left,bin_right,count\n";
  char buf[128];
  for (const HistBin& b : bins) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%lld\n", b.left, b.right,
                  static_cast<long long>(b.count));
    out << buf;
  }
}

}  // namespace smoothcert
