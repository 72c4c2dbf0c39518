#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "rlid/rng.hpp"

namespace rlid {

enum class Act { Identity, Relu, Tanh };

inline std::string_view act_name(Act a) {
  switch (a) {
    case Act::Identity: return "identity";
    case Act::Relu: return "relu";
    case Act::Tanh: return "tanh";
  }
  return "?";
}

inline Act act_from_name(std::string_view s) {
  if (s == "identity") return Act::Identity;
  if (s == "relu") return Act::Relu;
  if (s == "tanh") return Act::Tanh;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

namespace detail {

inline void apply_act(Act a, Eigen::MatrixXd& z) {
  switch (a) {
    case Act::Identity: return;
    case Act::Relu:
      z = z.cwiseMax(0.0);
      return;
    case Act::Tanh:
      z = z.array().tanh().matrix();
      return;
  }
}

/// Derivative through the activation given pre-activation z. Relu at exactly
/// zero uses subgradient 0.
inline Eigen::MatrixXd act_grad(Act a, const Eigen::MatrixXd& z, const Eigen::MatrixXd& dy) {
  switch (a) {
    case Act::Identity: return dy;
    case Act::Relu: return (z.array() > 0.0).cast<double>().matrix().cwiseProduct(dy);
    case Act::Tanh: {
      Eigen::MatrixXd t = z.array().tanh().matrix();
      return (1.0 - t.array().square()).matrix().cwiseProduct(dy);
    }
  }
  return dy;
}

}  // namespace detail

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
  Act act = Act::Identity;

  int in_dim() const { return static_cast<int>(W.cols()); }
  int out_dim() const { return static_cast<int>(W.rows()); }
};

/// 1D convolution over time. The flat input of a sample is the column-wise
/// flattening of an (in_channels x length) matrix, i.e. consecutive memory
/// holds one time step's channels.
struct Conv1dLayer {
  Eigen::MatrixXd W;  // out_channels x (in_channels * kernel)
  Eigen::VectorXd b;  // out_channels
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int in_length = 0;  // fixed input length
  Act act = Act::Identity;

  int out_length() const { return (in_length - kernel) / stride + 1; }
  int in_dim() const { return in_channels * in_length; }
  int out_dim() const { return out_channels * out_length(); }
};

using Layer = std::variant<DenseLayer, Conv1dLayer>;

struct Net {
  std::vector<Layer> layers;

  int in_dim() const {
    if (layers.empty()) throw std::logic_error("Net::in_dim on empty net");
    return std::visit([](const auto& l) { return l.in_dim(); }, layers.front());
  }
  int out_dim() const {
    if (layers.empty()) throw std::logic_error("Net::out_dim on empty net");
    return std::visit([](const auto& l) { return l.out_dim(); }, layers.back());
  }
};

/// Activation cache from a forward pass, consumed by the matching backward.
struct NetCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> zs;      // pre-activation of each layer
  int batch = 0;
};

struct NetGrads {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  static NetGrads zeros_like(const Net& net) {
    NetGrads g;
    for (const auto& l : net.layers) {
      std::visit(
          [&](const auto& layer) {
            g.dW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
            g.db.push_back(Eigen::VectorXd::Zero(layer.b.size()));
          },
          l);
    }
    return g;
  }

  void add_scaled(const NetGrads& o, double s) {
    for (std::size_t i = 0; i < dW.size(); ++i) {
      dW[i] += s * o.dW[i];
      db[i] += s * o.db[i];
    }
  }
};

namespace detail {

inline void conv_forward(const Conv1dLayer& c, const Eigen::MatrixXd& x, Eigen::MatrixXd& z) {
  const int lo = c.out_length();
  const int n = static_cast<int>(x.cols());
  z.resize(c.out_channels * lo, n);
  for (int s = 0; s < n; ++s) {
    for (int p = 0; p < lo; ++p) {
      const auto seg = x.col(s).segment(p * c.stride * c.in_channels, c.kernel * c.in_channels);
      z.col(s).segment(p * c.out_channels, c.out_channels) = c.W * seg + c.b;
    }
  }
}

inline void conv_backward(const Conv1dLayer& c, const Eigen::MatrixXd& x, const Eigen::MatrixXd& dz,
                          Eigen::MatrixXd& dW, Eigen::VectorXd& db, Eigen::MatrixXd& dx) {
  const int lo = c.out_length();
  const int n = static_cast<int>(x.cols());
  dx = Eigen::MatrixXd::Zero(x.rows(), n);
  for (int s = 0; s < n; ++s) {
    for (int p = 0; p < lo; ++p) {
      const auto seg = x.col(s).segment(p * c.stride * c.in_channels, c.kernel * c.in_channels);
      const auto g = dz.col(s).segment(p * c.out_channels, c.out_channels);
      dW.noalias() += g * seg.transpose();
      db += g;
      dx.col(s).segment(p * c.stride * c.in_channels, c.kernel * c.in_channels).noalias() +=
          c.W.transpose() * g;
    }
  }
}

}  // namespace detail

/// Forward over a batch (columns are samples). Supply a cache to enable a
/// later backward pass.
inline Eigen::MatrixXd net_forward(const Net& net, const Eigen::MatrixXd& x, NetCache* cache = nullptr) {
  if (x.rows() != net.in_dim())
    throw std::invalid_argument("net_forward: input dim " + std::to_string(x.rows()) + ", expected " +
                                std::to_string(net.in_dim()));
  Eigen::MatrixXd cur = x;
  if (cache) {
    cache->inputs.clear();
    cache->zs.clear();
    cache->batch = static_cast<int>(x.cols());
  }
  for (const auto& l : net.layers) {
    Eigen::MatrixXd z;
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      z.noalias() = d->W * cur;
      z.colwise() += d->b;
    } else {
      detail::conv_forward(std::get<Conv1dLayer>(l), cur, z);
    }
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->zs.push_back(z);
    }
    const Act act = std::visit([](const auto& layer) { return layer.act; }, l);
    detail::apply_act(act, z);
    cur = std::move(z);
  }
  return cur;
}

inline Eigen::VectorXd net_forward_one(const Net& net, const Eigen::VectorXd& x) {
  return net_forward(net, Eigen::MatrixXd(x)).col(0);
}

/// Exact reverse-mode gradients. `dy` is dLoss/dOutput for the batch of the
/// cache; parameter gradients are accumulated into `grads`; returns
/// dLoss/dInput.
inline Eigen::MatrixXd net_backward(const Net& net, const NetCache& cache, const Eigen::MatrixXd& dy,
                                    NetGrads& grads) {
  if (cache.inputs.size() != net.layers.size())
    throw std::invalid_argument("net_backward: stale or mismatched cache");
  Eigen::MatrixXd grad = dy;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const auto& l = net.layers[static_cast<std::size_t>(li)];
    const Act act = std::visit([](const auto& layer) { return layer.act; }, l);
    Eigen::MatrixXd dz = detail::act_grad(act, cache.zs[static_cast<std::size_t>(li)], grad);
    const Eigen::MatrixXd& x = cache.inputs[static_cast<std::size_t>(li)];
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      grads.dW[static_cast<std::size_t>(li)].noalias() += dz * x.transpose();
      grads.db[static_cast<std::size_t>(li)] += dz.rowwise().sum();
      grad.noalias() = d->W.transpose() * dz;
    } else {
      Eigen::MatrixXd dx;
      detail::conv_backward(std::get<Conv1dLayer>(l), x, dz, grads.dW[static_cast<std::size_t>(li)],
                            grads.db[static_cast<std::size_t>(li)], dx);
      grad = std::move(dx);
    }
  }
  return grad;
}

inline DenseLayer make_dense(int in, int out, Act act, Rng& rng) {
  DenseLayer l;
  const double s = std::sqrt(6.0 / (in + out));
  l.W.resize(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) l.W(i, j) = rng.uniform(-s, s);
  l.b = Eigen::VectorXd::Zero(out);
  l.act = act;
  return l;
}

inline Conv1dLayer make_conv(int in_ch, int out_ch, int kernel, int stride, int in_length, Act act,
                             Rng& rng) {
  Conv1dLayer l;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.in_length = in_length;
  l.act = act;
  const int fan_in = in_ch * kernel;
  const double s = std::sqrt(6.0 / (fan_in + out_ch));
  l.W.resize(out_ch, fan_in);
  for (int i = 0; i < out_ch; ++i)
    for (int j = 0; j < fan_in; ++j) l.W(i, j) = rng.uniform(-s, s);
  l.b = Eigen::VectorXd::Zero(out_ch);
  if (l.out_length() < 1) throw std::invalid_argument("make_conv: no output positions");
  return l;
}

/// Plain MLP: hidden layers with one activation, identity output head.
/// `out_scale` shrinks the output layer's initial weights; policy heads use a
/// small scale so the initial action mean sits near zero.
inline Net make_mlp(int in, const std::vector<int>& hidden, int out, Act act, Rng& rng,
                    double out_scale = 1.0) {
  Net net;
  int cur = in;
  for (int h : hidden) {
    net.layers.push_back(make_dense(cur, h, act, rng));
    cur = h;
  }
  DenseLayer head = make_dense(cur, out, Act::Identity, rng);
  head.W *= out_scale;
  net.layers.push_back(std::move(head));
  return net;
}

struct AdamOptimizer {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  NetGrads m, v;

  explicit AdamOptimizer(const Net& net, double lr_) : lr(lr_) {
    m = NetGrads::zeros_like(net);
    v = NetGrads::zeros_like(net);
  }

  void step(Net& net, const NetGrads& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto update = [&](auto& p, auto& mm, auto& vv, const auto& gg) {
      mm = beta1 * mm + (1.0 - beta1) * gg;
      vv = beta2 * vv + (1.0 - beta2) * gg.cwiseProduct(gg);
      p.array() -= lr * (mm.array() / bc1) / ((vv.array() / bc2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      std::visit(
          [&](auto& layer) {
            update(layer.W, m.dW[i], v.dW[i], g.dW[i]);
            update(layer.b, m.db[i], v.db[i], g.db[i]);
          },
          net.layers[i]);
    }
  }
};

struct SgdMomentum {
  double lr = 1e-2;
  double momentum = 0.9;
  NetGrads vel;

  SgdMomentum(const Net& net, double lr_, double momentum_ = 0.9) : lr(lr_), momentum(momentum_) {
    vel = NetGrads::zeros_like(net);
  }

  void step(Net& net, const NetGrads& g) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      vel.dW[i] = momentum * vel.dW[i] + g.dW[i];
      vel.db[i] = momentum * vel.db[i] + g.db[i];
      std::visit(
          [&](auto& layer) {
            layer.W -= lr * vel.dW[i];
            layer.b -= lr * vel.db[i];
          },
          net.layers[i]);
    }
  }
};

/// Flat views over all parameters, used by the finite-difference checks and
/// the checkpoint code.
inline std::vector<double*> parameter_view(Net& net) {
  std::vector<double*> out;
  for (auto& l : net.layers) {
    std::visit(
        [&](auto& layer) {
          for (int i = 0; i < layer.W.size(); ++i) out.push_back(layer.W.data() + i);
          for (int i = 0; i < layer.b.size(); ++i) out.push_back(layer.b.data() + i);
        },
        l);
  }
  return out;
}

inline std::vector<double> gradient_flat(const NetGrads& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.dW.size(); ++i) {
    for (int k = 0; k < g.dW[i].size(); ++k) out.push_back(g.dW[i].data()[k]);
    for (int k = 0; k < g.db[i].size(); ++k) out.push_back(g.db[i].data()[k]);
  }
  return out;
}

}  // namespace rlid
