#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rlid/io.hpp"
#include "rlid/nets.hpp"
#include "rlid/rng.hpp"
#include "rlid/schema.hpp"

namespace rlid {

struct PolicyConfig {
  int obs_dim = 0;
  int action_dim = 3;
  int embed_dim = 8;         // skill condition embedding width
  int history_len = 30;      // k past observations
  int history_dim = 3;       // embedding width mu
  double sigma = 0.055;      // fixed exploration stddev (0 at evaluation)
  std::vector<int> policy_hidden{256, 128, 128};
  std::vector<int> value_hidden{128, 64};
  int conv_channels = 16;

  int window_channels() const { return obs_dim + 1; }  // +1 padding flag
  int window_dim() const { return window_channels() * history_len; }
  int policy_in() const { return embed_dim + obs_dim + history_dim; }
};

/// All trainable state of one agent: policy mean net, value net, history
/// encoder, next-state predictor (pre-training only) and a fixed random
/// condition embedding per skill.
struct PolicyBundle {
  PolicyConfig cfg;
  std::vector<std::string> skills;
  Eigen::MatrixXd cond_embed;  // embed_dim x n_skills, fixed after creation
  Net phi;                     // action mean
  Net value;
  Net theta;  // history encoder
  Net psi;    // next-observation predictor

  int skill_index(const std::string& name) const {
    for (std::size_t i = 0; i < skills.size(); ++i)
      if (skills[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("unknown skill '" + name + "'");
  }
};

inline Net make_history_encoder(const PolicyConfig& cfg, Rng& rng) {
  Net net;
  int length = cfg.history_len;
  int ch = cfg.window_channels();
  for (int i = 0; i < 3; ++i) {
    const int kernel = std::min(3, length);
    const int stride = length > 2 * kernel ? 2 : 1;
    auto conv = make_conv(ch, cfg.conv_channels, kernel, stride, length, Act::Relu, rng);
    length = conv.out_length();
    ch = cfg.conv_channels;
    net.layers.push_back(std::move(conv));
  }
  net.layers.push_back(make_dense(ch * length, cfg.history_dim, Act::Identity, rng));
  return net;
}

inline PolicyBundle make_policy_bundle(const PolicyConfig& cfg, std::vector<std::string> skills,
                                       Rng& rng) {
  if (cfg.obs_dim <= 0) throw std::invalid_argument("make_policy_bundle: obs_dim unset");
  PolicyBundle b;
  b.cfg = cfg;
  b.skills = std::move(skills);
  b.cond_embed.resize(cfg.embed_dim, static_cast<int>(b.skills.size()));
  for (int i = 0; i < b.cond_embed.size(); ++i) b.cond_embed.data()[i] = rng.uniform(-1.0, 1.0);
  b.phi = make_mlp(cfg.policy_in(), cfg.policy_hidden, cfg.action_dim, Act::Relu, rng, 0.01);
  b.value = make_mlp(cfg.policy_in(), cfg.value_hidden, 1, Act::Relu, rng);
  b.theta = make_history_encoder(cfg, rng);
  b.psi = make_mlp(cfg.embed_dim + cfg.obs_dim + cfg.history_dim, cfg.policy_hidden, cfg.obs_dim,
                   Act::Relu, rng);
  return b;
}

/// Rolling window of the last k observations, oldest first, with a padding
/// flag channel that is 1 on slots before the episode started.
class HistoryBuffer {
 public:
  HistoryBuffer() = default;
  HistoryBuffer(int obs_dim, int history_len) : obs_dim_(obs_dim), k_(history_len) { reset(); }

  void reset() {
    buf_ = Eigen::MatrixXd::Zero(obs_dim_ + 1, k_);
    buf_.row(obs_dim_).setOnes();  // everything is padding at episode start
  }

  void push(const Eigen::VectorXd& obs) {
    if (obs.size() != obs_dim_) throw std::invalid_argument("HistoryBuffer::push: bad obs dim");
    buf_.leftCols(k_ - 1) = buf_.rightCols(k_ - 1).eval();
    buf_.col(k_ - 1).head(obs_dim_) = obs;
    buf_(obs_dim_, k_ - 1) = 0.0;
  }

  /// Column-wise flattening (one time step's channels contiguous).
  Eigen::VectorXd flat() const { return Eigen::Map<const Eigen::VectorXd>(buf_.data(), buf_.size()); }

 private:
  int obs_dim_ = 0;
  int k_ = 1;
  Eigen::MatrixXd buf_;
};

/// Deterministic history embedding h = theta(window).
inline Eigen::VectorXd he_encode(const PolicyBundle& b, const Eigen::VectorXd& window_flat) {
  if (window_flat.size() != b.cfg.window_dim())
    throw std::invalid_argument("he_encode: window length " + std::to_string(window_flat.size()) +
                                ", expected " + std::to_string(b.cfg.window_dim()));
  return net_forward_one(b.theta, window_flat);
}

inline Eigen::VectorXd policy_input(const PolicyBundle& b, int skill_idx, const Eigen::VectorXd& obs,
                                    const Eigen::VectorXd& h) {
  Eigen::VectorXd in(b.cfg.policy_in());
  in << b.cond_embed.col(skill_idx), obs, h;
  return in;
}

/// Exact diagonal-Gaussian log density.
inline double gaussian_log_prob(const Eigen::VectorXd& a, const Eigen::VectorXd& mean, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_log_prob: sigma must be positive");
  const double d = static_cast<double>(a.size());
  const double z2 = (a - mean).squaredNorm() / (sigma * sigma);
  return -0.5 * z2 - d * std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
}

struct ActResult {
  Eigen::VectorXd action;
  Eigen::VectorXd mean;
  double log_prob = 0.0;
};

/// Samples a ~ Normal(phi(input), sigma^2 I); sigma == 0 returns the mean
/// exactly (evaluation mode) with log_prob 0.
inline ActResult act(const PolicyBundle& b, int skill_idx, const Eigen::VectorXd& obs,
                     const Eigen::VectorXd& h, double sigma, Rng* rng) {
  ActResult r;
  r.mean = net_forward_one(b.phi, policy_input(b, skill_idx, obs, h));
  if (sigma <= 0.0) {
    r.action = r.mean;
    r.log_prob = 0.0;
    return r;
  }
  if (!rng) throw std::invalid_argument("act: sampling requires an rng");
  r.action = r.mean;
  for (int i = 0; i < r.action.size(); ++i) r.action[i] += sigma * rng->normal();
  r.log_prob = gaussian_log_prob(r.action, r.mean, sigma);
  return r;
}

/// One pre-training batch: per-sample history windows, the current
/// observation, the skill index and the next observation to predict.
struct PretrainBatch {
  Eigen::MatrixXd windows;   // window_dim x B
  Eigen::MatrixXd obs;       // obs_dim x B
  std::vector<int> skill;    // B
  Eigen::MatrixXd target;    // obs_dim x B
};

struct PretrainOptions {
  int steps = 2000;
  int batch_size = 64;
  double lr = 1e-2;
  double momentum = 0.9;
  double lambda_pred = 1.0;   // prediction-error weight
  double lambda_embed = 1e-5; // embedding regularization weight
  bool use_history = true;    // false trains the predictor with h forced to 0
};

struct PretrainStepResult {
  double loss = 0.0;
  double pred_term = 0.0;
  double embed_term = 0.0;
};

/// One joint gradient step on theta and psi for
///   L = mean_b [ lambda_pred * |psi([c, s_t, h_t]) - s_{t+1}|^2
///              + lambda_embed * |h_t|^2 ].
inline PretrainStepResult he_pretrain_step(PolicyBundle& b, const PretrainBatch& batch,
                                           const PretrainOptions& opt, SgdMomentum& opt_theta,
                                           SgdMomentum& opt_psi) {
  const int B = static_cast<int>(batch.windows.cols());
  if (B == 0) throw std::invalid_argument("he_pretrain_step: empty batch");
  NetCache theta_cache, psi_cache;
  Eigen::MatrixXd h;
  if (opt.use_history)
    h = net_forward(b.theta, batch.windows, &theta_cache);
  else
    h = Eigen::MatrixXd::Zero(b.cfg.history_dim, B);

  Eigen::MatrixXd psi_in(b.psi.in_dim(), B);
  for (int s = 0; s < B; ++s)
    psi_in.col(s) << b.cond_embed.col(batch.skill[static_cast<std::size_t>(s)]), batch.obs.col(s),
        h.col(s);
  const Eigen::MatrixXd pred = net_forward(b.psi, psi_in, &psi_cache);

  const Eigen::MatrixXd err = pred - batch.target;
  PretrainStepResult res;
  res.pred_term = opt.lambda_pred * err.squaredNorm() / B;
  res.embed_term = opt.lambda_embed * h.squaredNorm() / B;
  res.loss = res.pred_term + res.embed_term;

  NetGrads g_psi = NetGrads::zeros_like(b.psi);
  const Eigen::MatrixXd dpred = (2.0 * opt.lambda_pred / B) * err;
  const Eigen::MatrixXd dpsi_in = net_backward(b.psi, psi_cache, dpred, g_psi);
  opt_psi.step(b.psi, g_psi);

  if (opt.use_history) {
    Eigen::MatrixXd dh = dpsi_in.bottomRows(b.cfg.history_dim);
    dh += (2.0 * opt.lambda_embed / B) * h;
    NetGrads g_theta = NetGrads::zeros_like(b.theta);
    net_backward(b.theta, theta_cache, dh, g_theta);
    opt_theta.step(b.theta, g_theta);
  }
  return res;
}

/// All (window, obs, skill, next-obs) samples extractable from a dataset:
/// the current and next frame must be real; masked or pre-episode window
/// slots are zero with the padding flag set.
struct PretrainPool {
  Eigen::MatrixXd windows;
  Eigen::MatrixXd obs;
  std::vector<int> skill;
  Eigen::MatrixXd target;

  int size() const { return static_cast<int>(skill.size()); }
};

inline PretrainPool build_pretrain_pool(const PolicyBundle& b, const Dataset& ds) {
  const auto& schema = ds.schema;
  const int k = b.cfg.history_len;
  const int od = b.cfg.obs_dim;
  std::vector<Eigen::VectorXd> wins, cur, nxt;
  std::vector<int> skl;
  for (const auto& [skill, trajs] : ds.skills) {
    const int sidx = b.skill_index(skill);
    for (const auto& tr : trajs) {
      const int n = tr.length();
      std::vector<std::optional<Eigen::VectorXd>> obs(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        if (tr.frames[static_cast<std::size_t>(i)].real())
          obs[static_cast<std::size_t>(i)] = to_local_observation(tr.frames[static_cast<std::size_t>(i)], schema);
      for (int t = 0; t + 1 < n; ++t) {
        if (!obs[static_cast<std::size_t>(t)] || !obs[static_cast<std::size_t>(t + 1)]) continue;
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(od + 1, k);
        for (int j = 0; j < k; ++j) {
          const int src = t - k + j;
          if (src < 0 || !obs[static_cast<std::size_t>(src)]) {
            w(od, j) = 1.0;  // padding / missing
          } else {
            w.col(j).head(od) = *obs[static_cast<std::size_t>(src)];
          }
        }
        wins.push_back(Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()));
        cur.push_back(*obs[static_cast<std::size_t>(t)]);
        nxt.push_back(*obs[static_cast<std::size_t>(t + 1)]);
        skl.push_back(sidx);
      }
    }
  }
  PretrainPool pool;
  const int n = static_cast<int>(skl.size());
  if (n == 0) throw std::invalid_argument("build_pretrain_pool: no usable samples");
  pool.windows.resize(b.cfg.window_dim(), n);
  pool.obs.resize(od, n);
  pool.target.resize(od, n);
  for (int i = 0; i < n; ++i) {
    pool.windows.col(i) = wins[static_cast<std::size_t>(i)];
    pool.obs.col(i) = cur[static_cast<std::size_t>(i)];
    pool.target.col(i) = nxt[static_cast<std::size_t>(i)];
  }
  pool.skill = std::move(skl);
  return pool;
}

/// Pre-training driver; returns the per-step loss curve.
inline std::vector<double> pretrain_history_encoder(PolicyBundle& b, const Dataset& ds,
                                                    const PretrainOptions& opt, Rng& rng) {
  const PretrainPool pool = build_pretrain_pool(b, ds);
  SgdMomentum opt_theta(b.theta, opt.lr, opt.momentum);
  SgdMomentum opt_psi(b.psi, opt.lr, opt.momentum);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(opt.steps));
  const int B = std::min(opt.batch_size, pool.size());
  PretrainBatch batch;
  batch.windows.resize(pool.windows.rows(), B);
  batch.obs.resize(pool.obs.rows(), B);
  batch.target.resize(pool.target.rows(), B);
  batch.skill.resize(static_cast<std::size_t>(B));
  for (int step = 0; step < opt.steps; ++step) {
    for (int i = 0; i < B; ++i) {
      const int pick = rng.index(static_cast<std::size_t>(pool.size()));
      batch.windows.col(i) = pool.windows.col(pick);
      batch.obs.col(i) = pool.obs.col(pick);
      batch.target.col(i) = pool.target.col(pick);
      batch.skill[static_cast<std::size_t>(i)] = pool.skill[static_cast<std::size_t>(pick)];
    }
    losses.push_back(he_pretrain_step(b, batch, opt, opt_theta, opt_psi).loss);
  }
  return losses;
}

// --- checkpoint I/O ---------------------------------------------------------

namespace detail {

inline void save_net(std::ostream& out, const std::string& name, const Net& net) {
  out << "net " << name << ' ' << net.layers.size() << "\n";
  for (const auto& l : net.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      out << "dense " << d->W.cols() << ' ' << d->W.rows() << ' ' << act_name(d->act) << "\n";
      for (int i = 0; i < d->W.size(); ++i) out << format_double(d->W.data()[i]) << "\n";
      for (int i = 0; i < d->b.size(); ++i) out << format_double(d->b.data()[i]) << "\n";
    } else {
      const auto& c = std::get<Conv1dLayer>(l);
      out << "conv " << c.in_channels << ' ' << c.out_channels << ' ' << c.kernel << ' ' << c.stride
          << ' ' << c.in_length << ' ' << act_name(c.act) << "\n";
      for (int i = 0; i < c.W.size(); ++i) out << format_double(c.W.data()[i]) << "\n";
      for (int i = 0; i < c.b.size(); ++i) out << format_double(c.b.data()[i]) << "\n";
    }
  }
}

inline Net load_net(std::istream& in, const std::string& expect_name) {
  std::string tag, name;
  std::size_t n_layers = 0;
  in >> tag >> name >> n_layers;
  if (tag != "net" || name != expect_name) throw std::runtime_error("checkpoint: expected net " + expect_name);
  Net net;
  for (std::size_t li = 0; li < n_layers; ++li) {
    std::string kind;
    in >> kind;
    if (kind == "dense") {
      int in_d, out_d;
      std::string act;
      in >> in_d >> out_d >> act;
      DenseLayer d;
      d.W.resize(out_d, in_d);
      d.b.resize(out_d);
      d.act = act_from_name(act);
      for (int i = 0; i < d.W.size(); ++i) in >> d.W.data()[i];
      for (int i = 0; i < d.b.size(); ++i) in >> d.b.data()[i];
      net.layers.push_back(std::move(d));
    } else if (kind == "conv") {
      Conv1dLayer c;
      std::string act;
      in >> c.in_channels >> c.out_channels >> c.kernel >> c.stride >> c.in_length >> act;
      c.act = act_from_name(act);
      c.W.resize(c.out_channels, c.in_channels * c.kernel);
      c.b.resize(c.out_channels);
      for (int i = 0; i < c.W.size(); ++i) in >> c.W.data()[i];
      for (int i = 0; i < c.b.size(); ++i) in >> c.b.data()[i];
      net.layers.push_back(std::move(c));
    } else {
      throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
    }
    if (!in) throw std::runtime_error("checkpoint: truncated net block");
  }
  return net;
}

}  // namespace detail

inline void save_policy_bundle(const PolicyBundle& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "policy-checkpoint v1\n";
  out << "skills";
  for (const auto& s : b.skills) out << ' ' << s;
  out << "\n";
  out << "dims " << b.cfg.obs_dim << ' ' << b.cfg.action_dim << ' ' << b.cfg.embed_dim << ' '
      << b.cfg.history_len << ' ' << b.cfg.history_dim << ' ' << b.cfg.conv_channels << "\n";
  out << "sigma " << detail::format_double(b.cfg.sigma) << "\n";
  out << "policy_hidden";
  for (int h : b.cfg.policy_hidden) out << ' ' << h;
  out << "\n";
  out << "value_hidden";
  for (int h : b.cfg.value_hidden) out << ' ' << h;
  out << "\n";
  out << "cond_embed " << b.cond_embed.rows() << ' ' << b.cond_embed.cols() << "\n";
  for (int i = 0; i < b.cond_embed.size(); ++i) out << detail::format_double(b.cond_embed.data()[i]) << "\n";
  detail::save_net(out, "phi", b.phi);
  detail::save_net(out, "value", b.value);
  detail::save_net(out, "theta", b.theta);
  detail::save_net(out, "psi", b.psi);
  if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

inline PolicyBundle load_policy_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "policy-checkpoint v1")
    throw std::runtime_error("checkpoint: bad header in '" + path + "'");
  PolicyBundle b;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated");
  {
    std::istringstream iss(line);
    std::string tag, s;
    iss >> tag;
    if (tag != "skills") throw std::runtime_error("checkpoint: expected skills line");
    while (iss >> s) b.skills.push_back(s);
  }
  std::string tag;
  in >> tag >> b.cfg.obs_dim >> b.cfg.action_dim >> b.cfg.embed_dim >> b.cfg.history_len >>
      b.cfg.history_dim >> b.cfg.conv_channels;
  if (tag != "dims") throw std::runtime_error("checkpoint: expected dims line");
  in >> tag >> b.cfg.sigma;
  if (tag != "sigma") throw std::runtime_error("checkpoint: expected sigma line");
  in >> tag;
  if (tag != "policy_hidden") throw std::runtime_error("checkpoint: expected policy_hidden");
  b.cfg.policy_hidden.clear();
  {
    std::string rest;
    std::getline(in, rest);
    std::istringstream iss(rest);
    int h;
    while (iss >> h) b.cfg.policy_hidden.push_back(h);
  }
  in >> tag;
  if (tag != "value_hidden") throw std::runtime_error("checkpoint: expected value_hidden");
  b.cfg.value_hidden.clear();
  {
    std::string rest;
    std::getline(in, rest);
    std::istringstream iss(rest);
    int h;
    while (iss >> h) b.cfg.value_hidden.push_back(h);
  }
  int rows = 0, cols = 0;
  in >> tag >> rows >> cols;
  if (tag != "cond_embed") throw std::runtime_error("checkpoint: expected cond_embed");
  b.cond_embed.resize(rows, cols);
  for (int i = 0; i < b.cond_embed.size(); ++i) in >> b.cond_embed.data()[i];
  b.phi = detail::load_net(in, "phi");
  b.value = detail::load_net(in, "value");
  b.theta = detail::load_net(in, "theta");
  b.psi = detail::load_net(in, "psi");
  if (!in) throw std::runtime_error("checkpoint: truncated '" + path + "'");
  return b;
}

/// Byte-stable serialization of one net's parameters, used to assert the
/// history encoder stays frozen through RL updates.
inline std::string net_fingerprint(const Net& net) {
  std::ostringstream oss;
  detail::save_net(oss, "x", net);
  return oss.str();
}

}  // namespace rlid
