#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "smoothcert/gradcheck.hpp"
#include "smoothcert/losses.hpp"
#include "smoothcert/nn.hpp"
#include "smoothcert/rng.hpp"

namespace sc = smoothcert;

namespace {

sc::DenseNet zero_net(std::vector<int> dims) {
  sc::DenseNet net;
  net.layer_dims = std::move(dims);
  net.activation = sc::Activation::relu;
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    net.weights.emplace_back(net.layer_dims[l + 1], net.layer_dims[l]);
    net.biases.emplace_back(net.layer_dims[l + 1], 0.0);
  }
  return net;
}

// 1-d input, two logits (+w*x, -w*x): softmax gap is 2*w*x.
sc::DenseNet two_logit_net(double w) {
  sc::DenseNet net = zero_net({1, 2});
  net.weights[0](0, 0) = w;
  net.weights[0](1, 0) = -w;
  return net;
}

sc::NoiseDraw fixed_draw(std::vector<sc::Vector> deltas) {
  sc::NoiseDraw d;
  d.deltas = std::move(deltas);
  return d;
}

sc::NoiseDraw random_draw(std::uint64_t seed, int m, int dim, double sigma) {
  return sc::make_noise_draw(seed, 0, 0, m, dim, sigma);
}

void expect_bit_equal(const sc::LossEval& a, const sc::LossEval& b) {
  EXPECT_EQ(a.loss, b.loss);
  ASSERT_EQ(a.dlogits.size(), b.dlogits.size());
  for (std::size_t i = 0; i < a.dlogits.size(); ++i) {
    for (std::size_t k = 0; k < a.dlogits[i].size(); ++k) {
      EXPECT_EQ(a.dlogits[i][k], b.dlogits[i][k]);
    }
  }
}

double attack_objective(const sc::DenseNet& net, std::span<const double> x, int y,
                        const sc::NoiseDraw& draw) {
  double mean_py = 0.0;
  sc::Vector noisy(x.size());
  for (const sc::Vector& d : draw.deltas) {
    for (std::size_t i = 0; i < x.size(); ++i) noisy[i] = x[i] + d[i];
    mean_py += sc::forward(net, noisy).probs[y];
  }
  mean_py /= draw.m();
  return -std::log(mean_py);
}

}  // namespace

TEST(GaussianLoss, OnehotNetHasNearZeroLoss) {
  sc::DenseNet net = zero_net({2, 3});
  net.biases[0][1] = 500.0;  // class 1 regardless of input
  const std::vector<double> x = {0.3, -0.8};
  const sc::LossEval ev =
      sc::gaussian_loss(net, x, 1, fixed_draw({{0.1, 0.2}, {-0.3, 0.4}}));
  EXPECT_LT(ev.loss, 1e-12);
  EXPECT_GE(ev.loss, 0.0);
}

TEST(GaussianLoss, UniformNetIsLogK) {
  const sc::DenseNet net = zero_net({2, 10});
  const std::vector<double> x = {1.0, 2.0};
  const sc::LossEval ev = sc::gaussian_loss(net, x, 3, fixed_draw({{0.5, -0.5}}));
  EXPECT_NEAR(ev.loss, std::log(10.0), 1e-12);
}

TEST(GaussianLoss, UnbiasedAcrossM) {
  // m = 1 and m = 4 are both unbiased; their empirical means must agree
  // within 3 combined standard errors.
  const sc::DenseNet net = sc::make_dense_net({2, 8, 2}, sc::Activation::tanh, 3);
  const std::vector<double> x = {0.4, -0.6};
  const int trials = 10000;
  auto run = [&](int m) {
    double sum = 0.0, sum2 = 0.0;
    for (int t = 0; t < trials; ++t) {
      const sc::NoiseDraw draw = sc::make_noise_draw(99, t, m, m, 2, 0.5);
      const double v = sc::gaussian_loss(net, x, 1, draw).loss;
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / trials;
    const double var = sum2 / trials - mean * mean;
    return std::pair<double, double>(mean, std::sqrt(var / trials));
  };
  const auto [m1, se1] = run(1);
  const auto [m4, se4] = run(4);
  EXPECT_NEAR(m1, m4, 3.0 * std::sqrt(se1 * se1 + se4 * se4));
}

TEST(ConsistencyLoss, RequiresTwoDraws) {
  const sc::DenseNet net = zero_net({2, 2});
  const std::vector<double> x = {0.0, 0.0};
  EXPECT_THROW(sc::consistency_loss(net, x, 0, fixed_draw({{0.1, 0.1}}), 1.0, 0.5),
               std::invalid_argument);
}

TEST(ConsistencyLoss, IdenticalPredictionsGiveZeroKl) {
  // a zero net predicts uniform everywhere: KL term vanishes, entropy = ln K
  const sc::DenseNet net = zero_net({2, 4});
  const std::vector<double> x = {0.2, 0.8};
  const double eta = 0.7;
  const sc::LossEval ev = sc::consistency_loss(
      net, x, 2, fixed_draw({{0.4, -0.4}, {-1.0, 1.0}}), 3.0, eta);
  EXPECT_NEAR(ev.loss, std::log(4.0) + eta * std::log(4.0), 1e-12);
}

TEST(ConsistencyLoss, HandComputedExample) {
  // F(x+d1) = (0.75, 0.25), F(x+d2) = (0.25, 0.75), lambda = 1, eta = 0
  const double w = std::log(3.0) / 2.0;
  const sc::DenseNet net = two_logit_net(w);
  const std::vector<double> x = {0.0};
  const int y = 1;
  const sc::LossEval ev =
      sc::consistency_loss(net, x, y, fixed_draw({{1.0}, {-1.0}}), 1.0, 0.0);
  // oracle: mean CE = (-ln .25 - ln .75)/2; mean KL(Fhat||.) with Fhat=(.5,.5)
  const double mean_ce = 0.5 * (-std::log(0.25) - std::log(0.75));
  const double kl_one = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  EXPECT_NEAR(mean_ce, 0.836988, 1e-6);
  EXPECT_NEAR(kl_one, 0.143841, 1e-6);
  EXPECT_NEAR(ev.loss, mean_ce + kl_one, 1e-12);
  EXPECT_NEAR(ev.loss, 0.980829, 1e-6);
}

TEST(ConsistencyLoss, EntropyTermMatchesDirectFormula) {
  const sc::DenseNet net = sc::make_dense_net({2, 8, 3}, sc::Activation::relu, 21);
  const std::vector<double> x = {0.1, -0.1};
  const sc::NoiseDraw draw = random_draw(4, 2, 2, 0.5);
  const double base = sc::consistency_loss(net, x, 0, draw, 0.0, 0.0).loss;
  const double with_eta = sc::consistency_loss(net, x, 0, draw, 0.0, 2.0).loss;
  std::vector<sc::Vector> probs;
  sc::Vector noisy(2);
  for (const sc::Vector& d : draw.deltas) {
    for (int i = 0; i < 2; ++i) noisy[i] = x[i] + d[i];
    probs.push_back(sc::forward(net, noisy).probs);
  }
  sc::Vector mean(3, 0.0);
  for (const auto& p : probs)
    for (int k = 0; k < 3; ++k) mean[k] += p[k] / 2.0;
  EXPECT_NEAR(with_eta - base, 2.0 * sc::entropy(mean), 1e-12);
}

TEST(ReductionWeb, BitExactIdentities) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const sc::DenseNet net = sc::make_dense_net(
        {3, 12, 12, 4}, seed % 2 ? sc::Activation::relu : sc::Activation::tanh, seed);
    sc::RandomStream rs(seed, sc::StreamPurpose::data_gen, 17);
    std::vector<double> x(3);
    rs.fill_normal(0, x);
    const int y = static_cast<int>(rs.raw64(10) % 4);
    const sc::NoiseDraw draw = random_draw(seed + 1, 3, 3, 0.7);

    // consistency(lambda=0, eta=0) == gaussian
    expect_bit_equal(sc::consistency_loss(net, x, y, draw, 0.0, 0.0),
                     sc::gaussian_loss(net, x, y, draw));
    // kl_ablation == consistency(eta=0)
    expect_bit_equal(sc::kl_ablation_loss(net, x, y, draw, 2.5),
                     sc::consistency_loss(net, x, y, draw, 2.5, 0.0));
    // smoothadv(eps=0) == gaussian
    sc::TrainConfig cfg;
    cfg.loss_kind = sc::LossKind::smoothadv;
    cfg.sigma = 0.7;
    cfg.attack.epsilon = 0.0;
    cfg.m = 3;
    expect_bit_equal(sc::compute_loss(net, x, y, draw, cfg, 100),
                     sc::gaussian_loss(net, x, y, draw));
    // smoothadv_consistency(lambda=0, eta=0) == smoothadv, at any epsilon
    cfg.attack.epsilon = 0.5;
    cfg.lambda = 0.0;
    cfg.eta = 0.0;
    cfg.loss_kind = sc::LossKind::smoothadv_consistency;
    const sc::LossEval a = sc::compute_loss(net, x, y, draw, cfg, 100);
    cfg.loss_kind = sc::LossKind::smoothadv;
    const sc::LossEval b = sc::compute_loss(net, x, y, draw, cfg, 100);
    expect_bit_equal(a, b);
  }
}

TEST(RegularizerProperties, NonNegativity) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const sc::DenseNet net = sc::make_dense_net({2, 10, 3}, sc::Activation::tanh, seed);
    sc::RandomStream rs(seed, sc::StreamPurpose::data_gen, 23);
    std::vector<double> x(2);
    rs.fill_normal(0, x);
    const sc::NoiseDraw draw = random_draw(seed * 7 + 1, 2, 2, 0.8);
    const double base = sc::gaussian_loss(net, x, 0, draw).loss;
    EXPECT_GE(sc::consistency_loss(net, x, 0, draw, 1.0, 0.0).loss - base, -1e-15);
    EXPECT_GE(sc::consistency_loss(net, x, 0, draw, 0.0, 1.0).loss - base, -1e-15);
    EXPECT_GE(sc::mse_ablation_loss(net, x, 0, draw, 1.0).loss - base, -1e-15);
  }
}

TEST(RegularizerProperties, KlZeroIffIdenticalPredictions) {
  std::vector<sc::Vector> same = {{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
  EXPECT_LE(sc::consistency_kl_term(same), 1e-15);
  std::vector<sc::Vector> diff = {{0.2, 0.3, 0.5}, {0.25, 0.3, 0.45}};
  EXPECT_GT(sc::consistency_kl_term(diff), 1e-6);
}

TEST(RegularizerProperties, ContractionTowardMeanNeverIncreasesKlTerm) {
  // shrinking an ensemble toward its mean preserves the mean and can only
  // reduce the mean KL-to-mean
  sc::RandomStream rs(5, sc::StreamPurpose::data_gen, 31);
  std::uint64_t t = 0;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<sc::Vector> probs(3, sc::Vector(4));
    for (auto& p : probs) {
      double sum = 0.0;
      for (double& v : p) {
        v = -std::log(rs.uniform(t++));
        sum += v;
      }
      for (double& v : p) v /= sum;
    }
    sc::Vector mean(4, 0.0);
    for (const auto& p : probs)
      for (int k = 0; k < 4; ++k) mean[k] += p[k] / 3.0;
    double prev = -1.0;
    for (double c : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      std::vector<sc::Vector> contracted = probs;
      for (auto& p : contracted)
        for (int k = 0; k < 4; ++k) p[k] = mean[k] + c * (p[k] - mean[k]);
      const double term = sc::consistency_kl_term(contracted);
      EXPECT_GE(term, prev - 1e-12);
      prev = term;
    }
  }
}

TEST(StabilityLoss, LambdaZeroIsCleanCrossEntropy) {
  const sc::DenseNet net = sc::make_dense_net({2, 6, 3}, sc::Activation::relu, 2);
  const std::vector<double> x = {0.5, 0.5};
  const sc::LossEval ev =
      sc::stability_loss(net, x, 1, fixed_draw({{1.0, 0.0}}), 0.0);
  const sc::ForwardCache c = sc::forward_cache(net, x);
  EXPECT_EQ(ev.loss, -c.log_probs[1]);
}

TEST(StabilityLoss, ConstantNetGivesEntropyPerDraw) {
  const sc::DenseNet net = zero_net({2, 4});
  const std::vector<double> x = {0.1, 0.2};
  const double lambda = 2.0;
  const sc::LossEval ev =
      sc::stability_loss(net, x, 0, fixed_draw({{1.0, -1.0}, {0.3, 0.3}}), lambda);
  // CE(uniform, y) = ln K; soft CE of uniform against itself = H = ln K
  EXPECT_NEAR(ev.loss, std::log(4.0) + lambda * std::log(4.0), 1e-12);
}

TEST(MseAblation, DirectValue) {
  // saturated predictions (1,0) vs (0,1): mse term = lambda * 2
  const sc::DenseNet net = two_logit_net(20.0);
  const std::vector<double> x = {0.0};
  const double lambda = 3.0;
  const sc::LossEval with = sc::mse_ablation_loss(net, x, 0, fixed_draw({{1.0}, {-1.0}}), lambda);
  const double base = sc::gaussian_loss(net, x, 0, fixed_draw({{1.0}, {-1.0}})).loss;
  EXPECT_NEAR(with.loss - base, lambda * 2.0, 1e-12);
}

TEST(MseAblation, IdenticalPredictionsReduceToGaussian) {
  const sc::DenseNet net = zero_net({2, 3});
  const std::vector<double> x = {0.4, 0.4};
  const sc::NoiseDraw draw = fixed_draw({{0.1, 0.0}, {-0.2, 0.3}});
  expect_bit_equal(sc::mse_ablation_loss(net, x, 0, draw, 5.0),
                   sc::gaussian_loss(net, x, 0, draw));
}

TEST(MacerLoss, MisclassifiedExampleHasNoHinge) {
  sc::DenseNet net = zero_net({1, 3});
  net.biases[0][2] = 4.0;  // always predicts class 2
  const std::vector<double> x = {0.0};
  const sc::NoiseDraw draw = fixed_draw({{0.0}});
  const sc::LossEval ev = sc::macer_loss(net, x, /*y=*/0, draw, 10.0, 8.0, 1.0, 0.5);
  // loss reduces to CE(Fhat, y); the hinge is gated off
  const sc::Vector probs = sc::forward(net, x).probs;
  EXPECT_NEAR(ev.loss, -std::log(probs[0]), 1e-12);
}

TEST(MacerLoss, InactiveHingeGivesZeroHingeGradient) {
  sc::DenseNet net = zero_net({1, 2});
  net.biases[0][0] = 3.0;  // confident, correct for y = 0
  const std::vector<double> x = {0.0};
  const sc::NoiseDraw draw = fixed_draw({{0.0}});
  // gap = Quantile(p0) - Quantile(p1) is large; gamma tiny keeps hinge inactive
  const sc::LossEval active_gate = sc::macer_loss(net, x, 0, draw, 7.0, 0.01, 1.0, 0.5);
  const sc::LossEval no_lambda = sc::macer_loss(net, x, 0, draw, 0.0, 0.01, 1.0, 0.5);
  expect_bit_equal(active_gate, no_lambda);
}

TEST(MacerLoss, QuantileGapExample) {
  // Fhat = (0.8413, 0.1587), y = 0, sigma = 1, gamma = 8:
  // hinge = (1/2) * (8 - [Quantile(.8413) - Quantile(.1587)]) ~= 3.00018
  const double delta = std::log(0.8413 / 0.1587);
  const sc::DenseNet net = two_logit_net(delta / 2.0);
  const std::vector<double> x = {1.0};
  const sc::NoiseDraw draw = fixed_draw({{0.0}});
  const sc::LossEval ev = sc::macer_loss(net, x, 0, draw, 1.0, 8.0, 1.0, 1.0);
  const double expected = -std::log(0.8413) + 3.0001849064;  // frozen quantile oracle
  EXPECT_NEAR(ev.loss, expected, 1e-6);
}

TEST(MacerLoss, BetaTemperatureShapesMean) {
  // with beta large, tempered probabilities saturate toward one-hot
  const sc::DenseNet net = two_logit_net(0.5);
  const std::vector<double> x = {1.0};
  const sc::NoiseDraw draw = fixed_draw({{0.0}});
  const double l_b1 = sc::macer_loss(net, x, 0, draw, 0.0, 8.0, 1.0, 1.0).loss;
  const double l_b16 = sc::macer_loss(net, x, 0, draw, 0.0, 8.0, 16.0, 1.0).loss;
  // CE(Fhat, y) shrinks as Fhat_y -> 1 under temperature
  EXPECT_LT(l_b16, l_b1);
}

TEST(SmoothAdvAttack, ZeroEpsilonReturnsInput) {
  const sc::DenseNet net = sc::make_dense_net({2, 8, 2}, sc::Activation::relu, 6);
  const std::vector<double> x = {0.3, -0.9};
  sc::AttackParams ap;
  const sc::Vector adv = sc::smoothadv_attack(net, x, 0, random_draw(1, 2, 2, 0.5), ap, 0.0);
  EXPECT_EQ(adv[0], x[0]);
  EXPECT_EQ(adv[1], x[1]);
}

TEST(SmoothAdvAttack, SingleStepMovesAlongNormalizedGradient) {
  const sc::DenseNet net = sc::make_dense_net({2, 8, 2}, sc::Activation::tanh, 8);
  const std::vector<double> x = {0.2, 0.1};
  const int y = 1;
  const sc::NoiseDraw draw = random_draw(3, 2, 2, 0.3);
  sc::AttackParams ap;
  ap.steps = 1;
  ap.step_size = 0.05;
  const sc::Vector adv = sc::smoothadv_attack(net, x, y, draw, ap, /*epsilon=*/100.0);
  // finite-difference gradient of the attack objective
  const double h = 1e-6;
  sc::Vector g(2);
  for (int i = 0; i < 2; ++i) {
    std::vector<double> xp(x), xm(x);
    xp[i] += h;
    xm[i] -= h;
    g[i] = (attack_objective(net, xp, y, draw) - attack_objective(net, xm, y, draw)) / (2 * h);
  }
  const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1]);
  EXPECT_NEAR(adv[0] - x[0], ap.step_size * g[0] / norm, 1e-5);
  EXPECT_NEAR(adv[1] - x[1], ap.step_size * g[1] / norm, 1e-5);
}

TEST(SmoothAdvAttack, ProjectionKeepsL2Ball) {
  const sc::DenseNet net = sc::make_dense_net({2, 8, 2}, sc::Activation::relu, 14);
  const std::vector<double> x = {0.0, 0.0};
  sc::AttackParams ap;
  ap.steps = 20;
  ap.step_size = 0.5;
  const double eps = 0.3;
  const sc::Vector adv = sc::smoothadv_attack(net, x, 0, random_draw(5, 2, 2, 0.5), ap, eps);
  const double dist = std::hypot(adv[0] - x[0], adv[1] - x[1]);
  EXPECT_LE(dist, eps + 1e-12);
}

TEST(SmoothAdvAttack, AscendsObjectiveOnMostInstances) {
  int non_decrease = 0;
  const int cases = 100;
  for (int c = 0; c < cases; ++c) {
    const sc::DenseNet net = sc::make_dense_net({2, 12, 3}, sc::Activation::tanh, 100 + c);
    sc::RandomStream rs(c, sc::StreamPurpose::data_gen, 41);
    std::vector<double> x(2);
    rs.fill_normal(0, x);
    const int y = static_cast<int>(rs.raw64(7) % 3);
    const sc::NoiseDraw draw = random_draw(c + 500, 2, 2, 0.4);
    sc::AttackParams ap;
    ap.steps = 10;
    ap.step_size = 0.1;
    const sc::Vector adv = sc::smoothadv_attack(net, x, y, draw, ap, 0.5);
    if (attack_objective(net, adv, y, draw) >= attack_objective(net, x, y, draw) - 1e-12) {
      ++non_decrease;
    }
  }
  EXPECT_GE(non_decrease, 95);
}

TEST(SmoothAdvWarmup, LinearEpsilonSchedule) {
  sc::AttackParams ap;
  ap.epsilon = 1.0;
  ap.warmup_epochs = 10;
  EXPECT_DOUBLE_EQ(sc::effective_attack_epsilon(ap, 0), 0.0);
  EXPECT_DOUBLE_EQ(sc::effective_attack_epsilon(ap, 5), 0.5);
  EXPECT_DOUBLE_EQ(sc::effective_attack_epsilon(ap, 10), 1.0);
  EXPECT_DOUBLE_EQ(sc::effective_attack_epsilon(ap, 50), 1.0);
  ap.warmup_epochs = 0;
  EXPECT_DOUBLE_EQ(sc::effective_attack_epsilon(ap, 0), 1.0);
}

TEST(TrainConfig, ValidatesConsistencyM) {
  sc::TrainConfig cfg;
  cfg.sigma = 0.5;
  cfg.loss_kind = sc::LossKind::consistency;
  cfg.m = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.m = 2;
  EXPECT_NO_THROW(cfg.validate());
  cfg.loss_kind = sc::LossKind::gaussian;
  cfg.m = 1;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(GradCheck, AllLossKindsPass) {
  const std::vector<double> sample_x = {0.4, -0.7};
  for (sc::LossKind kind :
       {sc::LossKind::gaussian, sc::LossKind::consistency, sc::LossKind::stability,
        sc::LossKind::mse_ablation, sc::LossKind::kl_ablation, sc::LossKind::macer,
        sc::LossKind::smoothadv, sc::LossKind::smoothadv_consistency}) {
    for (std::uint64_t seed : {1ull, 2ull}) {
      const sc::DenseNet net = sc::make_dense_net(
          {2, 16, 16, 3}, seed % 2 ? sc::Activation::tanh : sc::Activation::relu, seed);
      sc::TrainConfig cfg;
      cfg.sigma = 0.5;
      cfg.lambda = 2.0;
      cfg.eta = 0.5;
      cfg.m = 2;
      cfg.loss_kind = kind;
      cfg.macer.beta = 2.0;
      cfg.macer.gamma = 8.0;
      cfg.attack.steps = 5;
      cfg.attack.step_size = 0.1;
      cfg.attack.epsilon = 0.3;
      const sc::NoiseDraw draw = random_draw(seed + 10, cfg.m, 2, cfg.sigma);
      const int y = static_cast<int>(seed % 3);
      const sc::GradCheckReport rep = sc::gradcheck(net, cfg, sample_x, y, draw);
      EXPECT_LT(rep.max_rel_err, 1e-4)
          << sc::loss_kind_name(kind) << " seed=" << seed
          << " worst analytic=" << rep.worst_analytic
          << " numeric=" << rep.worst_numeric;
    }
  }
}
