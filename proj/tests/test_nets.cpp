#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rlid/nets.hpp"
#include "rlid/policy.hpp"
#include "rlid/world.hpp"
#include "test_helpers.hpp"

using namespace rlid;

namespace {

Eigen::VectorXd random_vec(int n, Rng& rng, double span = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(-span, span);
  return v;
}

/// Central finite differences through an arbitrary scalar loss of the net.
/// Returns the worst relative error against the analytic gradient.
template <typename LossFn, typename GradFn>
double max_grad_rel_error(Net& net, LossFn&& loss, GradFn&& analytic, double h = 1e-5) {
  const NetGrads grads = analytic();
  const auto flat_grads = gradient_flat(grads);
  const auto params = parameter_view(net);
  REQUIRE(params.size() == flat_grads.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double save = *params[i];
    *params[i] = save + h;
    const double lp = loss();
    *params[i] = save - h;
    const double lm = loss();
    *params[i] = save;
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(flat_grads[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - flat_grads[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("forward: identity and bias-only layers") {
  Rng rng(51);
  Net net;
  DenseLayer l;
  l.W = Eigen::MatrixXd::Identity(4, 4);
  l.b = Eigen::VectorXd::Zero(4);
  l.act = Act::Identity;
  net.layers.push_back(l);
  const Eigen::VectorXd x = random_vec(4, rng);
  CHECK((net_forward_one(net, x) - x).norm() == 0.0);

  Net relu_net;
  DenseLayer z;
  z.W = Eigen::MatrixXd::Zero(3, 4);
  z.b = Eigen::VectorXd(3);
  z.b << 1.0, -2.0, 0.5;
  z.act = Act::Relu;
  relu_net.layers.push_back(z);
  const Eigen::VectorXd y = net_forward_one(relu_net, x);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);

  Eigen::VectorXd wrong(5);
  CHECK_THROWS_AS(net_forward_one(net, wrong), std::invalid_argument);
}

TEST_CASE("forward matches a scalar-loop reference on a random two-layer net") {
  Rng rng(52);
  Net net = make_mlp(6, {5}, 3, Act::Tanh, rng);
  const Eigen::VectorXd x = random_vec(6, rng);
  const Eigen::VectorXd got = net_forward_one(net, x);

  const auto& l0 = std::get<DenseLayer>(net.layers[0]);
  const auto& l1 = std::get<DenseLayer>(net.layers[1]);
  Eigen::VectorXd h(5);
  for (int i = 0; i < 5; ++i) {
    double acc = l0.b[i];
    for (int j = 0; j < 6; ++j) acc += l0.W(i, j) * x[j];
    h[i] = std::tanh(acc);
  }
  Eigen::VectorXd y(3);
  for (int i = 0; i < 3; ++i) {
    double acc = l1.b[i];
    for (int j = 0; j < 5; ++j) acc += l1.W(i, j) * h[j];
    y[i] = acc;
  }
  CHECK((got - y).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("backward: hand-derived single linear layer") {
  // L = 0.5 |W x|^2 with identity activation: dW = y x^T
  Rng rng(53);
  Net net;
  DenseLayer l;
  l.W.resize(3, 4);
  for (int i = 0; i < l.W.size(); ++i) l.W.data()[i] = rng.uniform(-1, 1);
  l.b = Eigen::VectorXd::Zero(3);
  l.act = Act::Identity;
  net.layers.push_back(l);
  const Eigen::VectorXd x = random_vec(4, rng);
  NetCache cache;
  const Eigen::MatrixXd y = net_forward(net, x, &cache);
  NetGrads g = NetGrads::zeros_like(net);
  net_backward(net, cache, y, g);  // dL/dy = y
  const Eigen::MatrixXd expect = y.col(0) * x.transpose();
  CHECK((g.dW[0] - expect).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((g.db[0] - y.col(0)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("backward matches central finite differences for dense and conv stacks") {
  Rng rng(54);

  SECTION("dense relu/tanh net") {
    Net net = make_mlp(7, {9, 6}, 4, Act::Relu, rng);
    std::get<DenseLayer>(net.layers[1]).act = Act::Tanh;
    const Eigen::VectorXd x = random_vec(7, rng);
    const Eigen::VectorXd target = random_vec(4, rng);
    auto loss = [&] { return 0.5 * (net_forward_one(net, x) - target).squaredNorm(); };
    auto analytic = [&] {
      NetCache cache;
      const Eigen::MatrixXd y = net_forward(net, x, &cache);
      NetGrads g = NetGrads::zeros_like(net);
      net_backward(net, cache, y.col(0) - target, g);
      return g;
    };
    CHECK(max_grad_rel_error(net, loss, analytic) < 1e-4);
  }

  SECTION("conv stack over time") {
    Net net;
    net.layers.push_back(make_conv(3, 5, 3, 2, 12, Act::Relu, rng));
    net.layers.push_back(make_conv(5, 4, 3, 2, 5, Act::Relu, rng));
    const auto& c1 = std::get<Conv1dLayer>(net.layers[1]);
    net.layers.push_back(make_dense(c1.out_dim(), 3, Act::Identity, rng));
    const Eigen::VectorXd x = random_vec(36, rng);
    const Eigen::VectorXd target = random_vec(3, rng);
    auto loss = [&] { return 0.5 * (net_forward_one(net, x) - target).squaredNorm(); };
    auto analytic = [&] {
      NetCache cache;
      const Eigen::MatrixXd y = net_forward(net, x, &cache);
      NetGrads g = NetGrads::zeros_like(net);
      net_backward(net, cache, y.col(0) - target, g);
      return g;
    };
    CHECK(max_grad_rel_error(net, loss, analytic) < 1e-4);
  }

  SECTION("input gradient on a batch") {
    Net net = make_mlp(5, {8}, 2, Act::Tanh, rng);
    Eigen::MatrixXd x(5, 3);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Zero(2, 3);
    NetCache cache;
    const Eigen::MatrixXd y = net_forward(net, x, &cache);
    NetGrads g = NetGrads::zeros_like(net);
    const Eigen::MatrixXd dx = net_backward(net, cache, y - target, g);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < 5; ++r) {
        const double save = x(r, c);
        x(r, c) = save + h;
        const double lp = 0.5 * (net_forward(net, x) - target).squaredNorm();
        x(r, c) = save - h;
        const double lm = 0.5 * (net_forward(net, x) - target).squaredNorm();
        x(r, c) = save;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - dx(r, c)) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("relu uses subgradient 0 at exactly zero") {
  Net net;
  DenseLayer l;
  l.W = Eigen::MatrixXd::Identity(1, 1);
  l.b = Eigen::VectorXd::Zero(1);
  l.act = Act::Relu;
  net.layers.push_back(l);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  NetCache cache;
  net_forward(net, Eigen::MatrixXd(x), &cache);
  NetGrads g = NetGrads::zeros_like(net);
  const Eigen::MatrixXd dx = net_backward(net, cache, Eigen::MatrixXd::Ones(1, 1), g);
  CHECK(dx(0, 0) == 0.0);
  CHECK(g.dW[0](0, 0) == 0.0);
}

TEST_CASE("history encoding is deterministic and checks window length") {
  Rng rng(55);
  PolicyConfig cfg;
  cfg.obs_dim = 14;
  cfg.history_len = 30;
  PolicyBundle b = make_policy_bundle(cfg, {"a"}, rng);
  const Eigen::VectorXd w = random_vec(cfg.window_dim(), rng);
  const Eigen::VectorXd h1 = he_encode(b, w);
  const Eigen::VectorXd h2 = he_encode(b, w);
  CHECK((h1 - h2).norm() == 0.0);
  CHECK(h1.allFinite());
  CHECK(h1.size() == cfg.history_dim);

  Eigen::VectorXd wrong(cfg.window_dim() - 1);
  CHECK_THROWS_AS(he_encode(b, wrong), std::invalid_argument);

  // windows differing only in the padding region may differ; only finiteness
  // is promised
  HistoryBuffer buf(cfg.obs_dim, cfg.history_len);
  const Eigen::VectorXd h_pad = he_encode(b, buf.flat());
  CHECK(h_pad.allFinite());
  buf.push(random_vec(cfg.obs_dim, rng));
  CHECK(he_encode(b, buf.flat()).allFinite());
}

TEST_CASE("act: deterministic at sigma 0, exact log densities, sampled moments") {
  Rng rng(56);
  PolicyConfig cfg;
  cfg.obs_dim = 14;
  PolicyBundle b = make_policy_bundle(cfg, {"a", "b"}, rng);
  const Eigen::VectorXd obs = random_vec(cfg.obs_dim, rng);
  const Eigen::VectorXd h = random_vec(cfg.history_dim, rng);

  const ActResult det = act(b, 0, obs, h, 0.0, nullptr);
  CHECK((det.action - det.mean).norm() == 0.0);

  // log density of the mean at sigma 0.055
  const double sigma = 0.055;
  const double lp = gaussian_log_prob(det.mean, det.mean, sigma);
  CHECK(lp == Catch::Approx(-3.0 * std::log(sigma * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-12));

  // moments of 1e5 sampled actions
  Rng sampler(57);
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sumsq = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < n; ++i) {
    const ActResult r = act(b, 0, obs, h, sigma, &sampler);
    const Eigen::VectorXd d = r.action - det.mean;
    sum += d;
    sumsq += d.cwiseProduct(d);
  }
  for (int k = 0; k < 3; ++k) {
    const double mean = sum[k] / n;
    const double sd = std::sqrt(sumsq[k] / n - mean * mean);
    CHECK(std::abs(sd - sigma) < 0.02 * sigma);
  }

  // seeded reproducibility, bit for bit
  Rng s1(58), s2(58);
  for (int i = 0; i < 20; ++i) {
    const ActResult r1 = act(b, 1, obs, h, sigma, &s1);
    const ActResult r2 = act(b, 1, obs, h, sigma, &s2);
    CHECK((r1.action - r2.action).norm() == 0.0);
    CHECK(r1.log_prob == r2.log_prob);
  }
}

TEST_CASE("gaussian log-prob gradient wrt the mean is exact") {
  Rng rng(59);
  const Eigen::VectorXd a = random_vec(3, rng), mean = random_vec(3, rng);
  const double sigma = 0.055;
  const double h = 1e-7;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd mp = mean, mm = mean;
    mp[k] += h;
    mm[k] -= h;
    const double fd = (gaussian_log_prob(a, mp, sigma) - gaussian_log_prob(a, mm, sigma)) / (2 * h);
    const double analytic = (a[k] - mean[k]) / (sigma * sigma);
    CHECK(std::abs(fd - analytic) < 1e-4 * std::max(1.0, std::abs(analytic)));
  }
}

TEST_CASE("pre-training step: loss decomposition and finite-difference check") {
  Rng rng(60);
  PolicyConfig cfg;
  cfg.obs_dim = 6;
  cfg.history_len = 8;
  cfg.history_dim = 2;
  cfg.policy_hidden = {10, 8};
  cfg.conv_channels = 4;
  PolicyBundle b = make_policy_bundle(cfg, {"a"}, rng);

  PretrainBatch batch;
  const int B = 5;
  batch.windows.resize(cfg.window_dim(), B);
  batch.obs.resize(cfg.obs_dim, B);
  batch.target.resize(cfg.obs_dim, B);
  for (int i = 0; i < batch.windows.size(); ++i) batch.windows.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < batch.obs.size(); ++i) batch.obs.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < batch.target.size(); ++i) batch.target.data()[i] = rng.uniform(-1, 1);
  batch.skill.assign(B, 0);

  PretrainOptions opt;
  opt.lambda_pred = 1.0;
  opt.lambda_embed = 1e-5;

  // loss recomputation: the embedding term is lambda_b * mean |h|^2
  {
    SgdMomentum ot(b.theta, 0.0, 0.0), op(b.psi, 0.0, 0.0);  // lr 0: pure evaluation
    const PretrainStepResult r = he_pretrain_step(b, batch, opt, ot, op);
    const Eigen::MatrixXd hs = net_forward(b.theta, batch.windows);
    CHECK(std::abs(r.embed_term - opt.lambda_embed * hs.squaredNorm() / B) < 1e-12);
    CHECK(std::abs(r.loss - r.pred_term - r.embed_term) < 1e-15);
  }

  // joint finite-difference check through theta and psi
  auto loss_value = [&] {
    const Eigen::MatrixXd h = net_forward(b.theta, batch.windows);
    Eigen::MatrixXd psi_in(b.psi.in_dim(), B);
    for (int s = 0; s < B; ++s)
      psi_in.col(s) << b.cond_embed.col(0), batch.obs.col(s), h.col(s);
    const Eigen::MatrixXd pred = net_forward(b.psi, psi_in);
    return opt.lambda_pred * (pred - batch.target).squaredNorm() / B +
           opt.lambda_embed * h.squaredNorm() / B;
  };
  NetCache theta_cache, psi_cache;
  const Eigen::MatrixXd h = net_forward(b.theta, batch.windows, &theta_cache);
  Eigen::MatrixXd psi_in(b.psi.in_dim(), B);
  for (int s = 0; s < B; ++s) psi_in.col(s) << b.cond_embed.col(0), batch.obs.col(s), h.col(s);
  const Eigen::MatrixXd pred = net_forward(b.psi, psi_in, &psi_cache);
  NetGrads g_psi = NetGrads::zeros_like(b.psi);
  const Eigen::MatrixXd dpred = (2.0 / B) * (pred - batch.target);
  const Eigen::MatrixXd dpsi_in = net_backward(b.psi, psi_cache, dpred, g_psi);
  NetGrads g_theta = NetGrads::zeros_like(b.theta);
  Eigen::MatrixXd dh = dpsi_in.bottomRows(cfg.history_dim);
  dh += (2.0 * opt.lambda_embed / B) * h;
  net_backward(b.theta, theta_cache, dh, g_theta);

  auto check_net = [&](Net& net, const NetGrads& grads) {
    const auto flat = gradient_flat(grads);
    const auto params = parameter_view(net);
    double worst = 0.0;
    const double step = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double save = *params[i];
      *params[i] = save + step;
      const double lp = loss_value();
      *params[i] = save - step;
      const double lm = loss_value();
      *params[i] = save;
      const double fd = (lp - lm) / (2 * step);
      const double denom = std::max({std::abs(fd), std::abs(flat[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - flat[i]) / denom);
    }
    return worst;
  };
  CHECK(check_net(b.psi, g_psi) < 1e-4);
  CHECK(check_net(b.theta, g_theta) < 1e-4);
}

TEST_CASE("pre-training drives the loss down on a learnable target") {
  const WorldParams wp;
  const StateSchema schema = toy_schema();
  Dataset ds;
  ds.schema = schema;
  ScriptedDemo hold = generate_hold_demo(1.0, wp, schema);
  hold.traj.skill = "hold";
  ds.skills["hold"].push_back(hold.traj);

  Rng rng(61);
  PolicyConfig cfg;
  cfg.obs_dim = observation_dim(schema);
  cfg.history_len = 10;
  cfg.policy_hidden = {32, 16};
  PolicyBundle b = make_policy_bundle(cfg, {"hold"}, rng);
  PretrainOptions opt;
  opt.steps = 300;
  opt.batch_size = 16;
  opt.lr = 1e-2;
  Rng pre(62);
  const auto losses = pretrain_history_encoder(b, ds, opt, pre);
  REQUIRE(losses.size() == 300);
  const double head = losses.front();
  double tail = 0.0;
  for (int i = 0; i < 20; ++i) tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  tail /= 20.0;
  CHECK(tail < 0.5 * head);
}

TEST_CASE("checkpoints reload byte-identically") {
  Rng rng(63);
  PolicyConfig cfg;
  cfg.obs_dim = 14;
  PolicyBundle b = make_policy_bundle(cfg, {"dribble", "carry"}, rng);
  const std::string dir = test::scratch_dir("ckpt");
  const std::string p1 = dir + "/a.txt";
  const std::string p2 = dir + "/b.txt";
  save_policy_bundle(b, p1);
  const PolicyBundle back = load_policy_bundle(p1);
  save_policy_bundle(back, p2);

  std::ifstream f1(p1), f2(p2);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE_FALSE(s1.empty());
  CHECK(s1 == s2);

  const Eigen::VectorXd obs = random_vec(cfg.obs_dim, rng);
  const Eigen::VectorXd h = Eigen::VectorXd::Zero(cfg.history_dim);
  CHECK((act(b, 0, obs, h, 0.0, nullptr).action - act(back, 0, obs, h, 0.0, nullptr).action).norm() ==
        0.0);
}

TEST_CASE("adam steps reduce a simple loss") {
  Rng rng(64);
  Net net = make_mlp(3, {4}, 1, Act::Relu, rng);
  const Eigen::VectorXd x = random_vec(3, rng);
  auto loss = [&] {
    const double y = net_forward_one(net, x)[0];
    return 0.5 * y * y;
  };
  const double before = loss();
  AdamOptimizer opt(net, 1e-3);
  for (int i = 0; i < 50; ++i) {
    NetCache cache;
    const Eigen::MatrixXd y = net_forward(net, Eigen::MatrixXd(x), &cache);
    NetGrads g = NetGrads::zeros_like(net);
    net_backward(net, cache, y, g);
    opt.step(net, g);
  }
  CHECK(loss() < before);
}
