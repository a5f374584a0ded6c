#pragma once

// A small fully-connected classifier with a softmax head, exact analytic
// gradients, and an SGD/Nesterov optimizer. All arithmetic is 64-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace smoothcert {

using Vector = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

enum class Activation { relu, tanh };

/// Parameters of the base classifier f. Immutable during inference; training
/// mutates a single exclusive copy.
struct DenseNet {
  std::vector<int> layer_dims;  // input dim first, class count last
  Activation activation = Activation::relu;
  std::vector<Matrix> weights;  // weights[l]: layer_dims[l+1] x layer_dims[l]
  std::vector<Vector> biases;
  // Optional layer-zero input normalization (x - mean) / std. Keeping it
  // inside the model guarantees noise is always added in raw coordinates.
  Vector input_mean;
  Vector input_std;
  double train_sigma = 0.0;  // sigma the net was trained with, 0 if untrained

  int input_dim() const { return layer_dims.front(); }
  int num_classes() const { return layer_dims.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const Matrix& w : weights) n += w.data.size();
    for (const Vector& b : biases) n += b.size();
    return n;
  }

  bool has_normalization() const { return !input_mean.empty(); }
};

/// A point on the probability simplex; the soft classifier output F(x).
struct ProbVector {
  Vector probs;
};

inline DenseNet make_dense_net(std::vector<int> dims, Activation act, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_dense_net: need at least 2 layer dims");
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("make_dense_net: layer dims must be positive");
  }
  DenseNet net;
  net.layer_dims = std::move(dims);
  net.activation = act;
  const int layers = static_cast<int>(net.layer_dims.size()) - 1;
  net.weights.reserve(layers);
  net.biases.reserve(layers);
  for (int l = 0; l < layers; ++l) {
    const int fan_in = net.layer_dims[l];
    const int fan_out = net.layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    Vector b(fan_out, 0.0);
    RandomStream rs(seed, StreamPurpose::param_init, static_cast<std::uint32_t>(l));
    std::uint64_t t = 0;
    for (double& v : w.data) v = (2.0 * rs.uniform(t++) - 1.0) * limit;
    for (double& v : b) v = (2.0 * rs.uniform(t++) - 1.0) * limit;
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

inline void softmax_from_logits(const Vector& logits, Vector& log_probs, Vector& probs) {
  const std::size_t k = logits.size();
  log_probs.resize(k);
  probs.resize(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::exp(logits[i] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < k; ++i) {
    log_probs[i] = logits[i] - lse;
    probs[i] = std::exp(log_probs[i]);
  }
}

/// Everything one forward pass produces, kept for backpropagation.
struct ForwardCache {
  std::vector<Vector> acts;     // acts[0] = (normalized) input, acts[l] = layer l-1 output
  std::vector<Vector> preacts;  // preacts[l] = W_l acts[l] + b_l; last entry = logits
  Vector log_probs;
  Vector probs;

  const Vector& logits() const { return preacts.back(); }
};

inline void apply_input_norm(const DenseNet& net, std::span<const double> x, Vector& out) {
  const int d = net.input_dim();
  out.resize(d);
  if (net.has_normalization()) {
    for (int i = 0; i < d; ++i) out[i] = (x[i] - net.input_mean[i]) / net.input_std[i];
  } else {
    std::copy(x.begin(), x.end(), out.begin());
  }
}

inline ForwardCache forward_cache(const DenseNet& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.input_dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  const int layers = net.num_layers();
  ForwardCache c;
  c.acts.resize(layers);
  c.preacts.resize(layers);
  apply_input_norm(net, x, c.acts[0]);
  for (int l = 0; l < layers; ++l) {
    const Matrix& w = net.weights[l];
    const Vector& b = net.biases[l];
    const Vector& in = c.acts[l];
    Vector& pre = c.preacts[l];
    pre.resize(w.rows);
    for (int o = 0; o < w.rows; ++o) {
      const double* wr = w.row(o);
      double acc = b[o];
      for (int i = 0; i < w.cols; ++i) acc += wr[i] * in[i];
      pre[o] = acc;
    }
    if (l + 1 < layers) {
      Vector& a = c.acts[l + 1];
      a.resize(w.rows);
      if (net.activation == Activation::relu) {
        for (int o = 0; o < w.rows; ++o) a[o] = pre[o] > 0.0 ? pre[o] : 0.0;
      } else {
        for (int o = 0; o < w.rows; ++o) a[o] = std::tanh(pre[o]);
      }
    }
  }
  softmax_from_logits(c.preacts.back(), c.log_probs, c.probs);
  return c;
}

/// Soft classifier output F(x): softmax of the final-layer logits.
inline ProbVector forward(const DenseNet& net, std::span<const double> x) {
  return ProbVector{forward_cache(net, x).probs};
}

/// Pre-softmax logits, for cancellation-free log-probability gaps.
inline Vector forward_logits(const DenseNet& net, std::span<const double> x) {
  return forward_cache(net, x).preacts.back();
}

/// Gradient of a scalar loss with respect to every DenseNet parameter.
struct Gradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  void set_zero() {
    for (Matrix& w : weights) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (Vector& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }
  void scale(double s) {
    for (Matrix& w : weights)
      for (double& v : w.data) v *= s;
    for (Vector& b : biases)
      for (double& v : b) v *= s;
  }
  void add_scaled(const Gradient& g, double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (std::size_t i = 0; i < weights[l].data.size(); ++i)
        weights[l].data[i] += s * g.weights[l].data[i];
      for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += s * g.biases[l][i];
    }
  }
};

inline Gradient zero_gradient_like(const DenseNet& net) {
  Gradient g;
  g.weights.reserve(net.num_layers());
  g.biases.reserve(net.num_layers());
  for (int l = 0; l < net.num_layers(); ++l) {
    g.weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
    g.biases.emplace_back(net.biases[l].size(), 0.0);
  }
  return g;
}

/// Reverse-mode pass for one forward branch: accumulates d(loss)/d(params)
/// into grad given d(loss)/d(logits). When dinput is non-null it also
/// receives d(loss)/d(raw input), mapped back through the normalization.
inline void backprop_into(const DenseNet& net, const ForwardCache& cache,
                          std::span<const double> dlogits, Gradient& grad,
                          Vector* dinput = nullptr) {
  const int layers = net.num_layers();
  Vector dh(dlogits.begin(), dlogits.end());
  for (int l = layers - 1; l >= 0; --l) {
    const Matrix& w = net.weights[l];
    const Vector& a_in = cache.acts[l];
    Matrix& dw = grad.weights[l];
    Vector& db = grad.biases[l];
    for (int o = 0; o < w.rows; ++o) {
      const double g = dh[o];
      db[o] += g;
      double* dwr = dw.row(o);
      for (int i = 0; i < w.cols; ++i) dwr[i] += g * a_in[i];
    }
    if (l == 0 && dinput == nullptr) break;
    Vector da(w.cols, 0.0);
    for (int o = 0; o < w.rows; ++o) {
      const double g = dh[o];
      const double* wr = w.row(o);
      for (int i = 0; i < w.cols; ++i) da[i] += g * wr[i];
    }
    if (l > 0) {
      const Vector& pre = cache.preacts[l - 1];
      const Vector& act = cache.acts[l];
      dh.resize(w.cols);
      if (net.activation == Activation::relu) {
        for (int i = 0; i < w.cols; ++i) dh[i] = pre[i] > 0.0 ? da[i] : 0.0;
      } else {
        for (int i = 0; i < w.cols; ++i) dh[i] = da[i] * (1.0 - act[i] * act[i]);
      }
    } else {
      dinput->resize(w.cols);
      if (net.has_normalization()) {
        for (int i = 0; i < w.cols; ++i) (*dinput)[i] += da[i] / net.input_std[i];
      } else {
        for (int i = 0; i < w.cols; ++i) (*dinput)[i] += da[i];
      }
    }
  }
}

/// Training-recipe hyperparameters: SGD with Nesterov momentum, weight decay
/// added to the gradient, and a step-decay learning-rate schedule.
struct OptimConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  std::vector<int> lr_decay_epochs = {30, 60};
  double lr_decay_factor = 0.1;
  int epochs = 90;
  int batch_size = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("optim: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("optim: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("optim: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("optim: momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("optim: weight_decay must be >= 0");
    if (!(lr_decay_factor > 0.0))
      throw std::invalid_argument("optim: lr_decay_factor must be > 0");
  }
};

inline double lr_at_epoch(const OptimConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (int e : cfg.lr_decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

struct SgdState {
  std::vector<Matrix> vel_w;
  std::vector<Vector> vel_b;
};

inline SgdState make_sgd_state(const DenseNet& net) {
  SgdState st;
  for (int l = 0; l < net.num_layers(); ++l) {
    st.vel_w.emplace_back(net.weights[l].rows, net.weights[l].cols);
    st.vel_b.emplace_back(net.biases[l].size(), 0.0);
  }
  return st;
}

inline void sgd_step(DenseNet& net, const Gradient& grad, SgdState& st,
                     const OptimConfig& cfg, int epoch) {
  const double lr = lr_at_epoch(cfg, epoch);
  const double mu = cfg.momentum;
  const double wd = cfg.weight_decay;
  auto update = [&](double& param, double g_raw, double& vel) {
    const double g = g_raw + wd * param;
    vel = mu * vel + g;
    const double step = cfg.nesterov ? g + mu * vel : vel;
    param -= lr * step;
  };
  for (int l = 0; l < net.num_layers(); ++l) {
    Matrix& w = net.weights[l];
    for (std::size_t i = 0; i < w.data.size(); ++i)
      update(w.data[i], grad.weights[l].data[i], st.vel_w[l].data[i]);
    Vector& b = net.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i)
      update(b[i], grad.biases[l][i], st.vel_b[l][i]);
  }
}

/// Batched logits evaluation for certification-scale sampling. Weights are
/// transposed once so the inner loops vectorize without reassociation.
class BatchForward {
 public:
  explicit BatchForward(const DenseNet& net, int max_batch)
      : net_(&net), max_batch_(max_batch) {
    int widest = 0;
    for (int d : net.layer_dims) widest = std::max(widest, d);
    buf_a_.resize(static_cast<std::size_t>(max_batch) * widest);
    buf_b_.resize(static_cast<std::size_t>(max_batch) * widest);
    wt_.reserve(net.num_layers());
    for (int l = 0; l < net.num_layers(); ++l) {
      const Matrix& w = net.weights[l];
      Matrix t(w.cols, w.rows);
      for (int r = 0; r < w.rows; ++r)
        for (int c = 0; c < w.cols; ++c) t(c, r) = w(r, c);
      wt_.push_back(std::move(t));
    }
  }

  /// xs: batch x input_dim row-major; logits_out: batch x num_classes.
  void run(const double* xs, int batch, double* logits_out) {
    if (batch > max_batch_) throw std::invalid_argument("BatchForward: batch too large");
    const DenseNet& net = *net_;
    const int d = net.input_dim();
    double* a = buf_a_.data();
    double* b = buf_b_.data();
    if (net.has_normalization()) {
      for (int r = 0; r < batch; ++r)
        for (int i = 0; i < d; ++i)
          a[static_cast<std::size_t>(r) * d + i] =
              (xs[static_cast<std::size_t>(r) * d + i] - net.input_mean[i]) / net.input_std[i];
    } else {
      std::copy(xs, xs + static_cast<std::size_t>(batch) * d, a);
    }
    const int layers = net.num_layers();
    for (int l = 0; l < layers; ++l) {
      const int in = net.layer_dims[l];
      const int out = net.layer_dims[l + 1];
      const Matrix& wt = wt_[l];
      const Vector& bias = net.biases[l];
      const bool last = (l + 1 == layers);
      double* dst = last ? logits_out : b;
      for (int r = 0; r < batch; ++r) {
        double* orow = dst + static_cast<std::size_t>(r) * out;
        for (int o = 0; o < out; ++o) orow[o] = bias[o];
        const double* arow = a + static_cast<std::size_t>(r) * in;
        for (int k = 0; k < in; ++k) {
          const double av = arow[k];
          const double* wrow = wt.row(k);
          for (int o = 0; o < out; ++o) orow[o] += av * wrow[o];
        }
        if (!last) {
          if (net.activation == Activation::relu) {
            for (int o = 0; o < out; ++o) orow[o] = orow[o] > 0.0 ? orow[o] : 0.0;
          } else {
            for (int o = 0; o < out; ++o) orow[o] = std::tanh(orow[o]);
          }
        }
      }
      std::swap(a, b);
    }
  }

 private:
  const DenseNet* net_;
  int max_batch_;
  std::vector<Matrix> wt_;
  std::vector<double> buf_a_, buf_b_;
};

/// Index of the largest entry; ties broken by lowest index.
inline int argmax_index(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace smoothcert
