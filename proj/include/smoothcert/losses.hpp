#pragma once

// Training objectives: Gaussian augmentation, consistency regularization,
// stability training, MSE/KL ablations, MACER, and the SmoothAdv attack with
// its training losses. Each loss returns the scalar value plus per-branch
// d(loss)/d(logits), from which loss_gradient() assembles exact parameter
// gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"
#include "statcore.hpp"

namespace smoothcert {

enum class LossKind {
  gaussian,
  consistency,
  stability,
  mse_ablation,
  kl_ablation,
  macer,
  smoothadv,
  smoothadv_consistency,
};

inline bool loss_uses_consistency_regularizer(LossKind k) {
  return k == LossKind::consistency || k == LossKind::kl_ablation ||
         k == LossKind::mse_ablation || k == LossKind::smoothadv_consistency;
}

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::gaussian: return "gaussian";
    case LossKind::consistency: return "consistency";
    case LossKind::stability: return "stability";
    case LossKind::mse_ablation: return "mse_ablation";
    case LossKind::kl_ablation: return "kl_ablation";
    case LossKind::macer: return "macer";
    case LossKind::smoothadv: return "smoothadv";
    case LossKind::smoothadv_consistency: return "smoothadv_consistency";
  }
  return "?";
}

inline LossKind loss_kind_from_name(const std::string& s) {
  for (LossKind k : {LossKind::gaussian, LossKind::consistency, LossKind::stability,
                     LossKind::mse_ablation, LossKind::kl_ablation, LossKind::macer,
                     LossKind::smoothadv, LossKind::smoothadv_consistency}) {
    if (s == loss_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown loss kind: " + s);
}

struct MacerParams {
  double gamma = 8.0;  // hinge margin on the quantile gap
  double beta = 16.0;  // inverse temperature applied to logits
};

struct AttackParams {
  int steps = 10;
  double epsilon = 1.0;
  double step_size = 0.2;  // 2 * epsilon / steps unless configured
  int warmup_epochs = 10;
};

/// Houses every training hyperparameter: noise level, regularization
/// strengths, Monte-Carlo sample count, loss selector, and optimizer recipe.
struct TrainConfig {
  double sigma = 0.25;
  double lambda = 0.0;
  double eta = 0.5;
  int m = 2;
  LossKind loss_kind = LossKind::gaussian;
  MacerParams macer;
  AttackParams attack;
  OptimConfig optim;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("train: sigma must be > 0");
    if (m < 1) throw std::invalid_argument("train: m must be >= 1");
    if (m < 2 && loss_uses_consistency_regularizer(loss_kind)) {
      throw std::invalid_argument(
          std::string("train: loss '") + loss_kind_name(loss_kind) +
          "' requires m >= 2; the regularizer vanishes with a single draw");
    }
    if (lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
    if (eta < 0.0) throw std::invalid_argument("train: eta must be >= 0");
    if (!(macer.gamma > 0.0)) throw std::invalid_argument("train: macer_gamma must be > 0");
    if (!(macer.beta >= 1.0)) throw std::invalid_argument("train: macer_beta must be >= 1");
    if (attack.steps < 0) throw std::invalid_argument("train: attack_steps must be >= 0");
    if (attack.epsilon < 0.0) throw std::invalid_argument("train: attack_epsilon must be >= 0");
    if (!(attack.step_size > 0.0))
      throw std::invalid_argument("train: attack_step_size must be > 0");
    if (attack.warmup_epochs < 0)
      throw std::invalid_argument("train: attack_warmup_epochs must be >= 0");
    optim.validate();
  }
};

/// m i.i.d. N(0, sigma^2 I) perturbations, reproducible from
/// (seed, example index, epoch).
struct NoiseDraw {
  std::vector<Vector> deltas;
  std::uint64_t rng_stream_id = 0;

  int m() const { return static_cast<int>(deltas.size()); }
};

inline NoiseDraw make_noise_draw(std::uint64_t seed, std::uint32_t example_index,
                                 std::uint32_t epoch, int m, int dim, double sigma) {
  RandomStream rs(seed, StreamPurpose::train_noise, example_index, epoch);
  NoiseDraw draw;
  draw.rng_stream_id = (static_cast<std::uint64_t>(example_index) << 24) | epoch;
  draw.deltas.resize(m);
  for (int i = 0; i < m; ++i) {
    Vector& d = draw.deltas[i];
    d.resize(dim);
    rs.fill_normal(static_cast<std::uint64_t>(i) * dim, d);
    for (double& v : d) v *= sigma;
  }
  return draw;
}

/// Scalar loss plus the gradient context: one forward cache and one
/// d(loss)/d(logits) vector per forward branch.
struct LossEval {
  double loss = 0.0;
  std::vector<ForwardCache> caches;
  std::vector<Vector> dlogits;
};

inline void accumulate_loss_gradient(const DenseNet& net, const LossEval& ev, Gradient& grad) {
  for (std::size_t i = 0; i < ev.caches.size(); ++i) {
    backprop_into(net, ev.caches[i], ev.dlogits[i], grad);
  }
}

/// Exact analytic gradient of ev.loss with respect to every parameter.
inline Gradient loss_gradient(const DenseNet& net, const LossEval& ev) {
  Gradient g = zero_gradient_like(net);
  accumulate_loss_gradient(net, ev, g);
  return g;
}

namespace detail {

inline constexpr double kProbFloor = 1e-12;       // inside logarithms only
inline constexpr double kMacerQuantileClamp = 1e-6;

inline void add_noisy(std::span<const double> x, const Vector& delta, Vector& out) {
  out.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + delta[i];
}

inline double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace detail

inline double kl_divergence(const Vector& p, const Vector& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) s += p[k] * (detail::clamped_log(p[k]) - detail::clamped_log(q[k]));
  }
  return s;
}

inline double entropy(const Vector& p) {
  double s = 0.0;
  for (double v : p) {
    if (v > 0.0) s -= v * detail::clamped_log(v);
  }
  return s;
}

/// Mean KL-to-mean regularizer value for a set of predictive distributions;
/// zero iff all predictions coincide.
inline double consistency_kl_term(const std::vector<Vector>& probs) {
  const int m = static_cast<int>(probs.size());
  const std::size_t k = probs.front().size();
  Vector mean(k, 0.0);
  for (const Vector& p : probs)
    for (std::size_t i = 0; i < k; ++i) mean[i] += p[i];
  for (double& v : mean) v /= m;
  double s = 0.0;
  for (const Vector& p : probs) s += kl_divergence(mean, p);
  return s / m;
}

/// L_nat: (1/m) sum_i CE(F(x + delta_i), y), the Monte-Carlo estimate of the
/// Gaussian-augmentation loss.
inline LossEval gaussian_loss(const DenseNet& net, std::span<const double> x, int y,
                              const NoiseDraw& draw) {
  const int m = draw.m();
  if (m < 1) throw std::invalid_argument("gaussian_loss: need m >= 1");
  if (y < 0 || y >= net.num_classes()) throw std::invalid_argument("gaussian_loss: bad label");
  LossEval ev;
  ev.caches.reserve(m);
  ev.dlogits.reserve(m);
  Vector noisy;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    detail::add_noisy(x, draw.deltas[i], noisy);
    ev.caches.push_back(forward_cache(net, noisy));
    const ForwardCache& c = ev.caches.back();
    total += -c.log_probs[y];
    Vector dl = c.probs;
    dl[y] -= 1.0;
    for (double& v : dl) v /= m;
    ev.dlogits.push_back(std::move(dl));
  }
  ev.loss = total / m;
  return ev;
}

/// Overall objective with consistency regularization:
///   (1/m) sum_i [ CE(F(x+d_i), y) + lambda * KL(Fhat || F(x+d_i)) ]
///   + eta * H(Fhat),   Fhat = (1/m) sum_i F(x+d_i).
/// The mean prediction is differentiated through all m branches.
inline LossEval consistency_loss(const DenseNet& net, std::span<const double> x, int y,
                                 const NoiseDraw& draw, double lambda, double eta) {
  const int m = draw.m();
  if (m < 2) throw std::invalid_argument("consistency_loss: requires m >= 2");
  LossEval ev = gaussian_loss(net, x, y, draw);
  if (lambda == 0.0 && eta == 0.0) return ev;  // exact reduction to the natural loss

  const int num_k = net.num_classes();
  Vector fhat(num_k, 0.0);
  for (const ForwardCache& c : ev.caches)
    for (int k = 0; k < num_k; ++k) fhat[k] += c.probs[k];
  for (double& v : fhat) v /= m;

  Vector log_fhat(num_k);
  for (int k = 0; k < num_k; ++k) log_fhat[k] = detail::clamped_log(fhat[k]);

  double mean_kl = 0.0;
  Vector mean_logp(num_k, 0.0);
  for (const ForwardCache& c : ev.caches) {
    double kl = 0.0;
    for (int k = 0; k < num_k; ++k) {
      kl += fhat[k] * (log_fhat[k] - c.log_probs[k]);
      mean_logp[k] += c.log_probs[k];
    }
    mean_kl += kl;
  }
  mean_kl /= m;
  for (double& v : mean_logp) v /= m;

  double ent = 0.0;
  for (int k = 0; k < num_k; ++k) ent -= fhat[k] * log_fhat[k];

  ev.loss += lambda * mean_kl + eta * ent;

  // Gradient through Fhat, shared across branches:
  //   w = (1/m) dL/dFhat = [ lambda (log Fhat + 1 - mean log p)
  //                          - eta (log Fhat + 1) ] / m
  Vector w(num_k);
  for (int k = 0; k < num_k; ++k) {
    w[k] = (lambda * (log_fhat[k] + 1.0 - mean_logp[k]) - eta * (log_fhat[k] + 1.0)) / m;
  }
  for (int i = 0; i < m; ++i) {
    const Vector& p = ev.caches[i].probs;
    double wp = 0.0;
    for (int k = 0; k < num_k; ++k) wp += w[k] * p[k];
    Vector& dl = ev.dlogits[i];
    for (int k = 0; k < num_k; ++k) {
      // direct KL term (soft-target cross entropy) + softmax-jacobian of w
      dl[k] += (lambda / m) * (p[k] - fhat[k]) + p[k] * (w[k] - wp);
    }
  }
  return ev;
}

/// Stability training: CE(F(x), y) + lambda * (1/m) sum_i CE(F(x), F(x+d_i))
/// with the clean prediction as a non-detached target distribution.
inline LossEval stability_loss(const DenseNet& net, std::span<const double> x, int y,
                               const NoiseDraw& draw, double lambda) {
  const int m = draw.m();
  if (m < 1) throw std::invalid_argument("stability_loss: need m >= 1");
  const int num_k = net.num_classes();
  LossEval ev;
  ev.caches.reserve(m + 1);
  ev.dlogits.reserve(m + 1);

  ev.caches.push_back(forward_cache(net, x));
  const ForwardCache& clean = ev.caches.front();
  ev.loss = -clean.log_probs[y];
  Vector dclean = clean.probs;
  dclean[y] -= 1.0;
  ev.dlogits.push_back(std::move(dclean));
  if (lambda == 0.0) return ev;

  Vector noisy;
  for (int i = 0; i < m; ++i) {
    detail::add_noisy(x, draw.deltas[i], noisy);
    ev.caches.push_back(forward_cache(net, noisy));
    const ForwardCache& c = ev.caches.back();
    double soft_ce = 0.0;
    for (int k = 0; k < num_k; ++k) soft_ce -= clean.probs[k] * c.log_probs[k];
    ev.loss += (lambda / m) * soft_ce;

    // noisy branch: soft-target CE direct derivative
    Vector dl(num_k);
    for (int k = 0; k < num_k; ++k) dl[k] = (lambda / m) * (c.probs[k] - clean.probs[k]);
    ev.dlogits.push_back(std::move(dl));

    // clean branch (target side): v = -log p_i through the softmax jacobian
    double vp = 0.0;
    for (int k = 0; k < num_k; ++k) vp += -c.log_probs[k] * clean.probs[k];
    Vector& dl0 = ev.dlogits.front();
    for (int k = 0; k < num_k; ++k) {
      dl0[k] += (lambda / m) * clean.probs[k] * (-c.log_probs[k] - vp);
    }
  }
  return ev;
}

/// MSE ablation: gaussian loss + lambda * ||F(x+d_1) - F(x+d_2)||_2^2.
inline LossEval mse_ablation_loss(const DenseNet& net, std::span<const double> x, int y,
                                  const NoiseDraw& draw, double lambda) {
  if (draw.m() < 2) throw std::invalid_argument("mse_ablation_loss: requires m >= 2");
  LossEval ev = gaussian_loss(net, x, y, draw);
  if (lambda == 0.0) return ev;
  const int num_k = net.num_classes();
  const Vector& p1 = ev.caches[0].probs;
  const Vector& p2 = ev.caches[1].probs;
  double sq = 0.0;
  Vector g(num_k);
  for (int k = 0; k < num_k; ++k) {
    const double d = p1[k] - p2[k];
    sq += d * d;
    g[k] = 2.0 * lambda * d;
  }
  ev.loss += lambda * sq;
  double gp1 = 0.0, gp2 = 0.0;
  for (int k = 0; k < num_k; ++k) {
    gp1 += g[k] * p1[k];
    gp2 += g[k] * p2[k];
  }
  for (int k = 0; k < num_k; ++k) {
    ev.dlogits[0][k] += p1[k] * (g[k] - gp1);
    ev.dlogits[1][k] -= p2[k] * (g[k] - gp2);
  }
  return ev;
}

/// KL ablation: identical to the consistency objective with eta = 0.
inline LossEval kl_ablation_loss(const DenseNet& net, std::span<const double> x, int y,
                                 const NoiseDraw& draw, double lambda) {
  return consistency_loss(net, x, y, draw, lambda, 0.0);
}

/// MACER: CE(Fhat, y) + lambda * (sigma/2) * max{gamma - G, 0} * 1[argmax Fhat = y],
/// where Fhat averages inverse-temperature softmaxes of the noisy logits and
/// G = Quantile(Fhat_y) - Quantile(max_{c != y} Fhat_c), quantile arguments
/// clamped away from the endpoints.
inline LossEval macer_loss(const DenseNet& net, std::span<const double> x, int y,
                           const NoiseDraw& draw, double lambda, double gamma, double beta,
                           double sigma) {
  const int m = draw.m();
  if (m < 1) throw std::invalid_argument("macer_loss: need m >= 1");
  if (!(beta >= 1.0)) throw std::invalid_argument("macer_loss: beta must be >= 1");
  const int num_k = net.num_classes();
  LossEval ev;
  ev.caches.reserve(m);
  ev.dlogits.reserve(m);

  std::vector<Vector> temp_probs(m);
  Vector fhat(num_k, 0.0);
  Vector noisy, scaled(num_k), log_q;
  for (int i = 0; i < m; ++i) {
    detail::add_noisy(x, draw.deltas[i], noisy);
    ev.caches.push_back(forward_cache(net, noisy));
    const Vector& logits = ev.caches.back().logits();
    for (int k = 0; k < num_k; ++k) scaled[k] = beta * logits[k];
    softmax_from_logits(scaled, log_q, temp_probs[i]);
    for (int k = 0; k < num_k; ++k) fhat[k] += temp_probs[i][k];
  }
  for (double& v : fhat) v /= m;

  ev.loss = -detail::clamped_log(fhat[y]);
  Vector u(num_k, 0.0);  // dL/dFhat
  if (fhat[y] > detail::kProbFloor) u[y] = -1.0 / fhat[y];

  int runner_up = -1;
  for (int k = 0; k < num_k; ++k) {
    if (k == y) continue;
    if (runner_up < 0 || fhat[k] > fhat[runner_up]) runner_up = k;
  }
  const bool predicted_y = runner_up >= 0 && argmax_index(fhat) == y;
  if (predicted_y && lambda != 0.0) {
    const double cl = detail::kMacerQuantileClamp;
    const double py = std::clamp(fhat[y], cl, 1.0 - cl);
    const double pc = std::clamp(fhat[runner_up], cl, 1.0 - cl);
    const double qy = std_normal_quantile(py);
    const double qc = std_normal_quantile(pc);
    const double gap = qy - qc;
    if (gap < gamma) {
      ev.loss += lambda * (sigma / 2.0) * (gamma - gap);
      // dQuantile(p)/dp = 1 / pdf(Quantile(p)); zero where the clamp binds
      if (fhat[y] > cl && fhat[y] < 1.0 - cl) {
        const double pdf = std::exp(-0.5 * qy * qy) * detail::kInvSqrt2Pi;
        u[y] += -lambda * (sigma / 2.0) / pdf;
      }
      if (fhat[runner_up] > cl && fhat[runner_up] < 1.0 - cl) {
        const double pdf = std::exp(-0.5 * qc * qc) * detail::kInvSqrt2Pi;
        u[runner_up] += lambda * (sigma / 2.0) / pdf;
      }
    }
  }

  for (int i = 0; i < m; ++i) {
    const Vector& q = temp_probs[i];
    double uq = 0.0;
    for (int k = 0; k < num_k; ++k) uq += u[k] * q[k];
    Vector dl(num_k);
    for (int k = 0; k < num_k; ++k) dl[k] = beta * q[k] * (u[k] - uq) / m;
    ev.dlogits.push_back(std::move(dl));
  }
  return ev;
}

inline double effective_attack_epsilon(const AttackParams& ap, int epoch) {
  if (ap.warmup_epochs <= 0) return ap.epsilon;
  const double f = std::min(1.0, static_cast<double>(epoch) / ap.warmup_epochs);
  return ap.epsilon * f;
}

/// SmoothAdv inner maximization: projected gradient ascent on
/// -log((1/m) sum_i F_y(x' + delta_i)) within the l2 ball of radius epsilon
/// around x. The same m noise draws are reused across steps (and by the
/// subsequent training loss).
inline Vector smoothadv_attack(const DenseNet& net, std::span<const double> x, int y,
                               const NoiseDraw& draw, const AttackParams& ap,
                               double epsilon) {
  Vector adv(x.begin(), x.end());
  if (epsilon <= 0.0 || ap.steps <= 0) return adv;
  const int m = draw.m();
  const int d = net.input_dim();
  Vector noisy, grad_x(d, 0.0), dl;
  Gradient scratch = zero_gradient_like(net);
  for (int step = 0; step < ap.steps; ++step) {
    std::vector<ForwardCache> caches;
    caches.reserve(m);
    double mean_py = 0.0;
    for (int i = 0; i < m; ++i) {
      detail::add_noisy(adv, draw.deltas[i], noisy);
      caches.push_back(forward_cache(net, noisy));
      mean_py += caches.back().probs[y];
    }
    mean_py /= m;
    if (!(mean_py > 0.0)) break;  // objective saturated; gradient vanishes
    std::fill(grad_x.begin(), grad_x.end(), 0.0);
    for (int i = 0; i < m; ++i) {
      const Vector& p = caches[i].probs;
      dl.resize(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double indicator = (static_cast<int>(k) == y) ? 1.0 : 0.0;
        dl[k] = p[k] * (p[y] - indicator) / (m * mean_py);
      }
      backprop_into(net, caches[i], dl, scratch, &grad_x);
    }
    double norm = 0.0;
    for (double v : grad_x) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (int i = 0; i < d; ++i) adv[i] += ap.step_size * grad_x[i] / norm;
    }
    double dist = 0.0;
    for (int i = 0; i < d; ++i) {
      const double diff = adv[i] - x[i];
      dist += diff * diff;
    }
    dist = std::sqrt(dist);
    if (dist > epsilon) {
      const double scale = epsilon / dist;
      for (int i = 0; i < d; ++i) adv[i] = x[i] + scale * (adv[i] - x[i]);
    }
  }
  return adv;
}

/// SmoothAdv outer minimization at a precomputed adversarial point:
/// (1/m) sum_i CE(F(x_hat + delta_i), y) with the reused noise draws.
inline LossEval smoothadv_train_loss(const DenseNet& net, std::span<const double> x_hat,
                                     int y, const NoiseDraw& draw) {
  return gaussian_loss(net, x_hat, y, draw);
}

/// Dispatch used by the training loop and gradcheck. For SmoothAdv kinds the
/// attack runs first with the warmed-up radius, then the training loss is
/// evaluated at the adversarial point.
inline LossEval compute_loss(const DenseNet& net, std::span<const double> x, int y,
                             const NoiseDraw& draw, const TrainConfig& cfg, int epoch) {
  switch (cfg.loss_kind) {
    case LossKind::gaussian:
      return gaussian_loss(net, x, y, draw);
    case LossKind::consistency:
      return consistency_loss(net, x, y, draw, cfg.lambda, cfg.eta);
    case LossKind::stability:
      return stability_loss(net, x, y, draw, cfg.lambda);
    case LossKind::mse_ablation:
      return mse_ablation_loss(net, x, y, draw, cfg.lambda);
    case LossKind::kl_ablation:
      return kl_ablation_loss(net, x, y, draw, cfg.lambda);
    case LossKind::macer:
      return macer_loss(net, x, y, draw, cfg.lambda, cfg.macer.gamma, cfg.macer.beta,
                        cfg.sigma);
    case LossKind::smoothadv:
    case LossKind::smoothadv_consistency: {
      const Vector x_hat = smoothadv_attack(net, x, y, draw, cfg.attack,
                                            effective_attack_epsilon(cfg.attack, epoch));
      if (cfg.loss_kind == LossKind::smoothadv) {
        return smoothadv_train_loss(net, x_hat, y, draw);
      }
      return consistency_loss(net, x_hat, y, draw, cfg.lambda, cfg.eta);
    }
  }
  throw std::logic_error("compute_loss: unreachable");
}

}  // namespace smoothcert
