#pragma once

// Central-difference verification of the analytic gradients, per parameter.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "losses.hpp"
#include "nn.hpp"

namespace smoothcert {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  std::size_t params_checked = 0;
  int worst_layer = -1;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passes(double tolerance) const { return max_rel_err < tolerance; }
};

namespace detail {

// |a - b| relative to the larger magnitude, floored so that the intrinsic
// O(1e-10) noise of central differences cannot dominate tiny components.
inline double grad_rel_err(double analytic, double numeric) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
  return std::fabs(analytic - numeric) / scale;
}

}  // namespace detail

/// Compares the analytic gradient of the configured loss against central
/// finite differences (step h) on every parameter, or on a random subsample
/// of max_params parameters for large nets. For SmoothAdv kinds the attack
/// runs once up front and its output is treated as a fixed input.
inline GradCheckReport gradcheck(DenseNet net, const TrainConfig& cfg,
                                 std::span<const double> x, int y, const NoiseDraw& draw,
                                 double h = 1e-5, std::size_t max_params = 10000) {
  Vector x_eval(x.begin(), x.end());
  if (cfg.loss_kind == LossKind::smoothadv || cfg.loss_kind == LossKind::smoothadv_consistency) {
    x_eval = smoothadv_attack(net, x, y, draw, cfg.attack, cfg.attack.epsilon);
  }
  auto eval = [&](const DenseNet& n) -> LossEval {
    switch (cfg.loss_kind) {
      case LossKind::smoothadv:
        return smoothadv_train_loss(n, x_eval, y, draw);
      case LossKind::smoothadv_consistency:
        return consistency_loss(n, x_eval, y, draw, cfg.lambda, cfg.eta);
      default:
        return compute_loss(n, x_eval, y, draw, cfg, /*epoch=*/0);
    }
  };

  const Gradient analytic = loss_gradient(net, eval(net));

  struct ParamRef {
    int layer;
    bool is_weight;
    std::size_t index;
  };
  std::vector<ParamRef> params;
  params.reserve(net.num_params());
  for (int l = 0; l < net.num_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].data.size(); ++i)
      params.push_back({l, true, i});
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) params.push_back({l, false, i});
  }
  if (params.size() > max_params) {
    RandomStream rs(cfg.optim.seed, StreamPurpose::gradcheck_pick);
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < max_params; ++i) {
      const std::size_t j = i + rs.raw64(t++) % (params.size() - i);
      std::swap(params[i], params[j]);
    }
    params.resize(max_params);
  }

  GradCheckReport rep;
  double sum_err = 0.0;
  for (const ParamRef& pr : params) {
    double& slot = pr.is_weight ? net.weights[pr.layer].data[pr.index]
                                : net.biases[pr.layer][pr.index];
    const double saved = slot;
    slot = saved + h;
    const double up = eval(net).loss;
    slot = saved - h;
    const double down = eval(net).loss;
    slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = pr.is_weight ? analytic.weights[pr.layer].data[pr.index]
                                  : analytic.biases[pr.layer][pr.index];
    const double err = detail::grad_rel_err(a, numeric);
    sum_err += err;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_layer = pr.layer;
      rep.worst_index = pr.index;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
  }
  rep.params_checked = params.size();
  rep.mean_rel_err = params.empty() ? 0.0 : sum_err / params.size();
  return rep;
}

}  // namespace smoothcert
