#pragma once

// Exact statistical primitives underpinning certification: standard-normal
// CDF/quantile and one-sided Clopper-Pearson lower confidence bounds.
//
// All operations here are pure and stateless; they are safe to call from any
// number of threads concurrently.

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace smoothcert {

/// A probability value, validated to lie in [0, 1] on construction.
class Probability {
 public:
  Probability() = default;
  explicit Probability(double v) : value_(v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::domain_error("Probability: value outside [0, 1]");
    }
  }
  double value() const { return value_; }
  operator double() const { return value_; }

 private:
  double value_ = 0.0;
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Acklam's rational approximation of the standard normal quantile
// (|relative error| < 1.15e-9 over (0,1)); polished by a Newton step below.
inline double acklam_quantile(double p) {
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Standard normal CDF Phi(z). Total on finite inputs; absolute error
/// well below 1e-12, no underflow to zero before the representable floor.
inline Probability std_normal_cdf(double z) {
  if (!std::isfinite(z)) {
    throw std::domain_error("std_normal_cdf: z must be finite");
  }
  return Probability(0.5 * std::erfc(-z * detail::kInvSqrt2));
}

/// Upper tail 1 - Phi(z), accurate in relative terms for large z.
inline double std_normal_upper_tail(double z) {
  return 0.5 * std::erfc(z * detail::kInvSqrt2);
}

/// Standard normal quantile Phi^{-1}(p) for p in (0, 1); throws
/// std::domain_error at and beyond the endpoints, where the quantile is
/// unbounded. Rational approximation plus one Newton polish step on Phi.
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("std_normal_quantile: p must lie strictly in (0, 1)");
  }
  double x = detail::acklam_quantile(p);
  const double pdf = std::exp(-0.5 * x * x) * detail::kInvSqrt2Pi;
  if (pdf > 0.0) {
    // Newton on whichever tail is computed without cancellation.
    if (p <= 0.5) {
      const double err = 0.5 * std::erfc(-x * detail::kInvSqrt2) - p;
      x -= err / pdf;
    } else {
      const double err = std_normal_upper_tail(x) - (1.0 - p);
      x += err / pdf;
    }
  }
  return x;
}

/// Exact binomial upper tail P[Binomial(n, p) >= k].
///
/// The sum runs over whichever side of the split point has fewer terms and is
/// carried in log space: terms are accumulated relative to the in-range mode
/// of the pmf, whose logarithm anchors the sum, so neither large n nor
/// extreme p can overflow or lose the tail to underflow.
inline double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;

  const double lp = std::log(p);
  const double l1p = std::log1p(-p);
  const double odds = p / (1.0 - p);

  // log of sum_{i=a..b} C(n,i) p^i (1-p)^(n-i)
  auto range_log_sum = [&](std::int64_t a, std::int64_t b) -> double {
    std::int64_t mode = static_cast<std::int64_t>(std::floor(static_cast<double>(n + 1) * p));
    if (mode < a) mode = a;
    if (mode > b) mode = b;
    const double dm = static_cast<double>(mode);
    const double dn = static_cast<double>(n);
    const double log_anchor = std::lgamma(dn + 1.0) - std::lgamma(dm + 1.0) -
                              std::lgamma(dn - dm + 1.0) + dm * lp + (dn - dm) * l1p;
    double sum = 1.0;
    double t = 1.0;
    for (std::int64_t i = mode + 1; i <= b; ++i) {
      t *= odds * static_cast<double>(n - i + 1) / static_cast<double>(i);
      sum += t;
      if (t < sum * 1e-21) break;  // terms are log-concave: remainder negligible
    }
    t = 1.0;
    for (std::int64_t i = mode; i > a; --i) {
      t *= static_cast<double>(i) / (odds * static_cast<double>(n - i + 1));
      sum += t;
      if (t < sum * 1e-21) break;
    }
    return log_anchor + std::log(sum);
  };

  if (n - k <= k - 1) {
    const double ls = range_log_sum(k, n);
    return ls < -745.0 ? 0.0 : std::exp(ls);
  }
  const double ls = range_log_sum(0, k - 1);
  const double below = ls < -745.0 ? 0.0 : std::exp(ls);
  const double tail = 1.0 - below;
  return tail < 0.0 ? 0.0 : tail;
}

/// One-sided Clopper-Pearson lower confidence bound: the largest p with
/// P[Binomial(n, p) >= k] <= alpha (0 when k = 0). The true success
/// probability exceeds the bound with probability at least 1 - alpha.
inline Probability clopper_pearson_lower(std::int64_t k, std::int64_t n, double alpha) {
  if (n < 1 || k < 0 || k > n || !(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error(
        "clopper_pearson_lower: need 0 <= k <= n, n >= 1, 0 < alpha < 1");
  }
  if (k == 0) return Probability(0.0);
  if (k == n) {
    // P[Binomial(n, p) >= n] = p^n, solved in closed form.
    return Probability(std::pow(alpha, 1.0 / static_cast<double>(n)));
  }
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_upper_tail(k, n, mid) > alpha) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return Probability(0.5 * (lo + hi));
}

}  // namespace smoothcert
