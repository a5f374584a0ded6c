#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "smoothcert/losses.hpp"
#include "smoothcert/nn.hpp"

namespace sc = smoothcert;

namespace {

sc::DenseNet zero_net(std::vector<int> dims, sc::Activation act = sc::Activation::relu) {
  sc::DenseNet net;
  net.layer_dims = std::move(dims);
  net.activation = act;
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    net.weights.emplace_back(net.layer_dims[l + 1], net.layer_dims[l]);
    net.biases.emplace_back(net.layer_dims[l + 1], 0.0);
  }
  return net;
}

}  // namespace

TEST(Forward, ZeroNetIsUniform) {
  const sc::DenseNet net = zero_net({3, 8, 5});
  const std::vector<double> x = {0.4, -1.2, 7.0};
  const sc::ProbVector p = sc::forward(net, x);
  ASSERT_EQ(p.probs.size(), 5u);
  for (double v : p.probs) EXPECT_DOUBLE_EQ(v, 0.2);
  const sc::Vector logits = sc::forward_logits(net, x);
  for (double v : logits) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Forward, SingleLinearLayerSoftmax) {
  sc::DenseNet net = zero_net({2, 2});
  net.weights[0](0, 0) = 1.0;
  net.weights[0](1, 1) = 1.0;
  const std::vector<double> x = {10.0, 0.0};
  const sc::ProbVector p = sc::forward(net, x);
  EXPECT_NEAR(p.probs[0], 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(p.probs[1], std::exp(-10.0) / (1.0 + std::exp(-10.0)), 1e-15);
}

TEST(Forward, Deterministic) {
  const sc::DenseNet net = sc::make_dense_net({4, 16, 3}, sc::Activation::tanh, 7);
  const std::vector<double> x = {0.1, -0.2, 0.3, 0.9};
  const sc::ProbVector a = sc::forward(net, x);
  const sc::ProbVector b = sc::forward(net, x);
  for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_EQ(a.probs[i], b.probs[i]);
}

TEST(Forward, LogSoftmaxConsistency) {
  const sc::DenseNet net = sc::make_dense_net({3, 12, 12, 4}, sc::Activation::relu, 3);
  const std::vector<double> x = {0.5, -1.0, 2.0};
  const sc::ForwardCache c = sc::forward_cache(net, x);
  for (std::size_t k = 0; k < c.probs.size(); ++k) {
    EXPECT_NEAR(std::log(c.probs[k]), c.log_probs[k], 1e-9);
  }
}

TEST(Forward, SoftmaxShiftInvariance) {
  sc::DenseNet net = sc::make_dense_net({2, 8, 3}, sc::Activation::relu, 11);
  const std::vector<double> x = {0.7, -0.4};
  const sc::ProbVector base = sc::forward(net, x);
  for (double& b : net.biases.back()) b += 123.456;  // constant logit shift
  const sc::ProbVector shifted = sc::forward(net, x);
  for (std::size_t k = 0; k < base.probs.size(); ++k) {
    EXPECT_NEAR(base.probs[k], shifted.probs[k], 1e-12);
  }
}

TEST(Forward, ValidProbVectorOnRandomNets) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const sc::DenseNet net = sc::make_dense_net({3, 16, 16, 7},
                                                seed % 2 ? sc::Activation::relu
                                                         : sc::Activation::tanh,
                                                seed);
    sc::RandomStream rs(seed, sc::StreamPurpose::data_gen, 5);
    std::vector<double> x(3);
    rs.fill_normal(0, x);
    const sc::ProbVector p = sc::forward(net, x);
    double sum = 0.0;
    for (double v : p.probs) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Forward, ShapeMismatchThrows) {
  const sc::DenseNet net = sc::make_dense_net({3, 4, 2}, sc::Activation::relu, 0);
  const std::vector<double> x = {1.0, 2.0};
  EXPECT_THROW(sc::forward(net, x), std::invalid_argument);
}

TEST(Forward, InputNormalizationIsLayerZero) {
  sc::DenseNet net = zero_net({2, 2});
  net.weights[0](0, 0) = 1.0;
  net.weights[0](1, 1) = 1.0;
  net.input_mean = {1.0, -1.0};
  net.input_std = {2.0, 0.5};
  const std::vector<double> x = {3.0, 0.0};
  // normalized input: ((3-1)/2, (0+1)/0.5) = (1, 2) -> logits (1, 2)
  const sc::Vector logits = sc::forward_logits(net, x);
  EXPECT_DOUBLE_EQ(logits[0], 1.0);
  EXPECT_DOUBLE_EQ(logits[1], 2.0);
}

TEST(Backward, ZeroDlogitsGiveZeroGradient) {
  const sc::DenseNet net = sc::make_dense_net({3, 8, 4}, sc::Activation::relu, 1);
  const std::vector<double> x = {0.2, 0.4, -0.8};
  sc::LossEval ev;
  ev.caches.push_back(sc::forward_cache(net, x));
  ev.dlogits.emplace_back(4, 0.0);
  const sc::Gradient g = sc::loss_gradient(net, ev);
  for (const sc::Matrix& w : g.weights) {
    for (double v : w.data) EXPECT_EQ(v, 0.0);
  }
  for (const sc::Vector& b : g.biases) {
    for (double v : b) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, LinearSoftmaxCrossEntropyClosedForm) {
  // single linear layer: dlogits = probs - onehot(y), dW = dlogits x input
  sc::DenseNet net = sc::make_dense_net({3, 4}, sc::Activation::relu, 5);
  const std::vector<double> x = {0.3, -1.1, 0.7};
  const int y = 2;
  sc::NoiseDraw draw;
  draw.deltas.push_back(sc::Vector(3, 0.0));  // zero noise: clean CE
  const sc::LossEval ev = sc::gaussian_loss(net, x, y, draw);
  const sc::ForwardCache& c = ev.caches[0];
  EXPECT_NEAR(ev.loss, -c.log_probs[y], 1e-15);
  const sc::Gradient g = sc::loss_gradient(net, ev);
  for (int o = 0; o < 4; ++o) {
    const double dlog = c.probs[o] - (o == y ? 1.0 : 0.0);
    EXPECT_NEAR(g.biases[0][o], dlog, 1e-15);
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(g.weights[0](o, i), dlog * x[i], 1e-15);
    }
  }
}

TEST(Sgd, ZeroGradientNoDecayLeavesParamsUnchanged) {
  sc::DenseNet net = sc::make_dense_net({2, 4, 2}, sc::Activation::relu, 9);
  const sc::DenseNet before = net;
  sc::Gradient g = sc::zero_gradient_like(net);
  sc::SgdState st = sc::make_sgd_state(net);
  sc::OptimConfig cfg;
  cfg.weight_decay = 0.0;
  sc::sgd_step(net, g, st, cfg, 0);
  for (int l = 0; l < net.num_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].data.size(); ++i) {
      EXPECT_EQ(net.weights[l].data[i], before.weights[l].data[i]);
    }
  }
}

TEST(Sgd, PlainStepFormula) {
  sc::DenseNet net = zero_net({1, 1});
  net.weights[0](0, 0) = 2.0;
  sc::Gradient g = sc::zero_gradient_like(net);
  g.weights[0](0, 0) = 3.0;
  sc::SgdState st = sc::make_sgd_state(net);
  sc::OptimConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.nesterov = false;
  cfg.weight_decay = 0.01;
  cfg.lr_decay_epochs = {};
  sc::sgd_step(net, g, st, cfg, 0);
  // param -= lr * (g + wd * param) = 2 - 0.1 * (3 + 0.01 * 2)
  EXPECT_NEAR(net.weights[0](0, 0), 2.0 - 0.1 * (3.0 + 0.02), 1e-15);
}

TEST(Sgd, LrSchedule) {
  sc::OptimConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.lr_decay_epochs = {30, 60};
  cfg.lr_decay_factor = 0.1;
  EXPECT_DOUBLE_EQ(sc::lr_at_epoch(cfg, 0), 0.5);
  EXPECT_DOUBLE_EQ(sc::lr_at_epoch(cfg, 29), 0.5);
  EXPECT_DOUBLE_EQ(sc::lr_at_epoch(cfg, 30), 0.05);
  EXPECT_DOUBLE_EQ(sc::lr_at_epoch(cfg, 59), 0.05);
  EXPECT_NEAR(sc::lr_at_epoch(cfg, 60), 0.005, 1e-15);
}

TEST(Sgd, NesterovUsesLookahead) {
  // one step from zero velocity: nesterov moves by lr*(1+mu)*g, plain by lr*g
  auto one_step = [](bool nesterov) {
    sc::DenseNet net = zero_net({1, 1});
    net.weights[0](0, 0) = 1.0;
    sc::Gradient g = sc::zero_gradient_like(net);
    g.weights[0](0, 0) = 1.0;
    sc::SgdState st = sc::make_sgd_state(net);
    sc::OptimConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.9;
    cfg.nesterov = nesterov;
    cfg.weight_decay = 0.0;
    cfg.lr_decay_epochs = {};
    sc::sgd_step(net, g, st, cfg, 0);
    return net.weights[0](0, 0);
  };
  EXPECT_NEAR(one_step(true), 1.0 - 0.1 * 1.9, 1e-15);
  EXPECT_NEAR(one_step(false), 1.0 - 0.1, 1e-15);
}

TEST(Init, SeededAndBounded) {
  const sc::DenseNet a = sc::make_dense_net({5, 7, 3}, sc::Activation::relu, 42);
  const sc::DenseNet b = sc::make_dense_net({5, 7, 3}, sc::Activation::relu, 42);
  const sc::DenseNet c = sc::make_dense_net({5, 7, 3}, sc::Activation::relu, 43);
  bool any_diff = false;
  for (int l = 0; l < a.num_layers(); ++l) {
    const double limit =
        std::sqrt(6.0 / (a.layer_dims[l] + a.layer_dims[l + 1])) + 1e-12;
    for (std::size_t i = 0; i < a.weights[l].data.size(); ++i) {
      EXPECT_EQ(a.weights[l].data[i], b.weights[l].data[i]);
      EXPECT_LE(std::fabs(a.weights[l].data[i]), limit);
      any_diff |= a.weights[l].data[i] != c.weights[l].data[i];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(BatchForward, MatchesSingleForward) {
  for (sc::Activation act : {sc::Activation::relu, sc::Activation::tanh}) {
    const sc::DenseNet net = sc::make_dense_net({3, 16, 16, 4}, act, 17);
    const int batch = 33;
    std::vector<double> xs(batch * 3);
    sc::RandomStream rs(1, sc::StreamPurpose::data_gen, 2);
    rs.fill_normal(0, xs);
    sc::BatchForward bf(net, 64);
    std::vector<double> logits(batch * 4);
    bf.run(xs.data(), batch, logits.data());
    for (int r = 0; r < batch; ++r) {
      const sc::Vector single = sc::forward_logits(
          net, std::span<const double>(xs.data() + r * 3, 3));
      for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(logits[r * 4 + k], single[k], 1e-12);
      }
    }
  }
}
