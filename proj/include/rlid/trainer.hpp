#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/ats.hpp"
#include "rlid/config.hpp"
#include "rlid/policy.hpp"
#include "rlid/reward.hpp"
#include "rlid/stitch.hpp"
#include "rlid/world.hpp"

namespace rlid {

/// Component switches. Disabling a component degenerates the sampler to the
/// plain protocol: no external stitches, no neighborhood perturbation,
/// uniform start indices, zero history embedding.
struct AblationSwitches {
  bool stf = true;
  bool stg = true;
  bool ats = true;
  bool he = true;
};

struct TrainerConfig {
  WorldParams world;
  AugmentParams aug;
  AtsConfig ats;
  PolicyConfig policy;
  PretrainOptions pretrain;
  AblationSwitches use;

  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double adam_stepsize = 2e-5;
  double value_stepsize = 2e-4;
  int episode_len = 60;
  int n_envs = 64;
  int steps_per_env = 60;
  int ppo_epochs = 4;
  int minibatch = 1024;
  int iterations = 200;
  int checkpoint_every = 0;  // 0: final only
  std::uint64_t seed = 0;

  int samples_per_iteration() const { return n_envs * steps_per_env; }
};

/// Builds a TrainerConfig from a flat key-value file; every key falls back to
/// its built-in default and the resolved set lands in the run manifest.
inline TrainerConfig trainer_config_from_kv(KeyValueConfig& kv) {
  TrainerConfig c;
  c.gamma = kv.get_double("discount", c.gamma);
  c.gae_lambda = kv.get_double("gae_lambda", c.gae_lambda);
  c.clip = kv.get_double("ppo_clip", c.clip);
  c.adam_stepsize = kv.get_double("adam_stepsize", c.adam_stepsize);
  c.value_stepsize = kv.get_double("value_stepsize", c.value_stepsize);
  c.episode_len = kv.get_int("episode_length", c.episode_len);
  c.n_envs = kv.get_int("envs", c.n_envs);
  const int samples = kv.get_int("samples_per_update", c.n_envs * c.steps_per_env);
  c.steps_per_env = std::max(1, samples / std::max(1, c.n_envs));
  c.minibatch = kv.get_int("minibatch_size", c.minibatch);
  c.ppo_epochs = kv.get_int("ppo_epochs", c.ppo_epochs);
  c.iterations = kv.get_int("iterations", c.iterations);
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);

  c.policy.sigma = kv.get_double("action_sigma", c.policy.sigma);
  c.policy.embed_dim = kv.get_int("skill_embed_dim", c.policy.embed_dim);
  c.policy.history_len = kv.get_int("history_len", c.policy.history_len);
  c.policy.history_dim = kv.get_int("history_dim", c.policy.history_dim);

  c.aug.max_masks = kv.get_int("n_max", c.aug.max_masks);
  c.aug.tau = kv.get_double("tau", c.aug.tau);
  c.aug.p_external = kv.get_double("p_external", c.aug.p_external);
  c.aug.p_neighborhood = kv.get_double("p_neighborhood", c.aug.p_neighborhood);
  c.ats.lambda_start = kv.get_double("lambda_s", c.ats.lambda_start);
  c.ats.lambda_class = kv.get_double("lambda_c", c.ats.lambda_class);
  c.ats.ema_alpha = kv.get_double("ema_alpha", c.ats.ema_alpha);

  c.pretrain.steps = kv.get_int("he_pretrain_steps", c.pretrain.steps);
  c.pretrain.batch_size = kv.get_int("he_batch", c.pretrain.batch_size);
  c.pretrain.lr = kv.get_double("he_stepsize", c.pretrain.lr);
  c.pretrain.momentum = kv.get_double("he_momentum", c.pretrain.momentum);
  c.pretrain.lambda_pred = kv.get_double("he_lambda_a", c.pretrain.lambda_pred);
  c.pretrain.lambda_embed = kv.get_double("he_lambda_b", c.pretrain.lambda_embed);

  c.world.gravity = kv.get_double("gravity", c.world.gravity);
  c.world.restitution = kv.get_double("restitution", c.world.restitution);
  c.world.hand_max_accel = kv.get_double("hand_max_accel", c.world.hand_max_accel);
  c.world.contact_radius = kv.get_double("contact_radius", c.world.contact_radius);
  c.world.grab_blend = kv.get_double("grab_blend", c.world.grab_blend);
  c.world.ball_radius = kv.get_double("ball_radius", c.world.ball_radius);
  const int sim_hz = kv.get_int("sim_hz", 120);
  const int control_hz = kv.get_int("control_hz", 60);
  if (sim_hz % control_hz != 0) throw std::runtime_error("sim_hz must be a multiple of control_hz");
  c.world.dt_sim = 1.0 / sim_hz;
  c.world.substeps = sim_hz / control_hz;
  return c;
}

inline std::map<std::string, std::string> trainer_manifest(const TrainerConfig& c,
                                                           const std::string& dataset,
                                                           const std::vector<std::string>& skills) {
  std::map<std::string, std::string> m;
  auto put = [&](const std::string& k, double v) { m[k] = detail::format_double(v); };
  put("discount", c.gamma);
  put("gae_lambda", c.gae_lambda);
  put("ppo_clip", c.clip);
  put("adam_stepsize", c.adam_stepsize);
  put("value_stepsize", c.value_stepsize);
  m["episode_length"] = std::to_string(c.episode_len);
  m["envs"] = std::to_string(c.n_envs);
  m["samples_per_update"] = std::to_string(c.samples_per_iteration());
  m["minibatch_size"] = std::to_string(c.minibatch);
  m["ppo_epochs"] = std::to_string(c.ppo_epochs);
  m["iterations"] = std::to_string(c.iterations);
  m["checkpoint_every"] = std::to_string(c.checkpoint_every);
  put("action_sigma", c.policy.sigma);
  m["skill_embed_dim"] = std::to_string(c.policy.embed_dim);
  m["history_len"] = std::to_string(c.policy.history_len);
  m["history_dim"] = std::to_string(c.policy.history_dim);
  m["n_max"] = std::to_string(c.aug.max_masks);
  put("tau", c.aug.tau);
  put("p_external", c.aug.p_external);
  put("p_neighborhood", c.aug.p_neighborhood);
  put("lambda_s", c.ats.lambda_start);
  put("lambda_c", c.ats.lambda_class);
  put("ema_alpha", c.ats.ema_alpha);
  m["he_pretrain_steps"] = std::to_string(c.pretrain.steps);
  m["he_batch"] = std::to_string(c.pretrain.batch_size);
  put("he_stepsize", c.pretrain.lr);
  put("he_momentum", c.pretrain.momentum);
  put("he_lambda_a", c.pretrain.lambda_pred);
  put("he_lambda_b", c.pretrain.lambda_embed);
  put("gravity", c.world.gravity);
  put("restitution", c.world.restitution);
  put("hand_max_accel", c.world.hand_max_accel);
  put("contact_radius", c.world.contact_radius);
  put("grab_blend", c.world.grab_blend);
  put("ball_radius", c.world.ball_radius);
  m["sim_hz"] = std::to_string(static_cast<int>(std::lround(1.0 / c.world.dt_sim)));
  m["control_hz"] =
      std::to_string(static_cast<int>(std::lround(1.0 / (c.world.dt_sim * c.world.substeps))));
  m["seed"] = std::to_string(c.seed);
  m["ablate_stf"] = c.use.stf ? "off" : "on";
  m["ablate_stg"] = c.use.stg ? "off" : "on";
  m["ablate_ats"] = c.use.ats ? "off" : "on";
  m["ablate_he"] = c.use.he ? "off" : "on";
  m["dataset"] = dataset;
  std::string sk;
  for (const auto& s : skills) {
    if (!sk.empty()) sk += ',';
    sk += s;
  }
  m["skills"] = sk;
  return m;
}

/// Maps a raw policy action vector onto a world control: the first two
/// entries are the normalized hand acceleration and the third is the grab
/// channel, centered so that a zero-initialized policy sits exactly on the
/// engagement threshold and the fixed exploration noise can cross it.
inline Action policy_world_action(const Eigen::VectorXd& a) {
  Action out;
  out.accel = {a[0], a[1]};
  out.grab = std::clamp(a[2] + 0.5, 0.0, 1.0);
  return out;
}

/// Sets the world from the clip's start frame (contacts recomputed, ball kept
/// above the floor) and points the reference cursor at the next frame.
inline std::pair<WorldState, int> reset_from_clip(const Trajectory& clip, const StateSchema& schema,
                                                  const WorldParams& wp) {
  if (clip.frames.empty() || clip.frames.front().masked)
    throw std::invalid_argument("reset_from_clip: clip must start with a real frame");
  return {state_from_frame(clip.frames.front(), schema, wp), 1};
}

/// Generalized advantage estimation. `values` carries one entry per step plus
/// the bootstrap value of the state after the last step.
inline void compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda, std::span<double> advantages, std::span<double> returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || advantages.size() != n || returns.size() != n)
    throw std::invalid_argument("compute_gae: length mismatch");
  double carry = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    carry = delta + gamma * lambda * carry;
    advantages[i] = carry;
    returns[i] = carry + values[i];
  }
}

struct EpisodeRecord {
  int skill = 0;
  int start_index = -1;  // -1: externally stitched start
  std::vector<double> rewards;  // non-skipped per-frame rewards
};

struct RolloutBatch {
  Eigen::MatrixXd inputs;   // policy_in x N
  Eigen::MatrixXd actions;  // action_dim x N
  Eigen::VectorXd logp;
  Eigen::VectorXd values;
  Eigen::VectorXd rewards;  // 0 on skipped steps
  std::vector<char> skipped;
  std::vector<char> done;
  Eigen::VectorXd bootstrap;  // value after the step, used where done or at buffer end
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  int n_envs = 0;
  int steps_per_env = 0;
  std::vector<EpisodeRecord> episodes;  // completed during this batch

  int flat(int env, int t) const { return env * steps_per_env + t; }
  int size() const { return n_envs * steps_per_env; }
};

/// Frozen per-iteration view of the sampling distributions.
struct SamplerSnapshot {
  std::vector<double> skill_probs;
  std::vector<std::vector<int>> start_indices;   // per skill
  std::vector<std::vector<double>> start_probs;  // per skill
};

inline SamplerSnapshot freeze_sampler(const AtsScheduler& sched, const std::vector<std::string>& skills,
                                      const AtsConfig& ats, bool use_ats) {
  SamplerSnapshot snap;
  const double ls = use_ats ? ats.lambda_start : 0.0;
  const double lc = use_ats ? ats.lambda_class : 0.0;
  snap.skill_probs = sched.skill_distribution(lc);
  for (const auto& s : skills) {
    snap.start_indices.push_back(sched.start_indices(s));
    snap.start_probs.push_back(sched.start_distribution(s, ls));
  }
  return snap;
}

namespace detail {

struct EnvSlot {
  WorldState state;
  Trajectory clip;
  int cursor = 1;
  int steps = 0;
  int skill = 0;
  int start_index = -1;
  std::vector<double> ep_rewards;
  HistoryBuffer hist;
  Rng rng{0};
};

struct TrainRuntime {
  const StateSchema* schema = nullptr;
  RewardWeights weights;
  std::vector<StitchedGraph> graphs;  // per skill
  FrameFixup fixup;
};

inline void reset_slot(EnvSlot& slot, const SamplerSnapshot& snap, const TrainRuntime& rt,
                       const TrainerConfig& cfg) {
  slot.skill = slot.rng.categorical(snap.skill_probs);
  const auto sample = sample_augmented(rt.graphs[static_cast<std::size_t>(slot.skill)],
                                       snap.start_indices[static_cast<std::size_t>(slot.skill)],
                                       snap.start_probs[static_cast<std::size_t>(slot.skill)],
                                       *rt.schema, rt.weights, slot.rng, rt.fixup);
  slot.clip = sample.clip;
  slot.start_index = sample.source == ClipSample::Source::Reference ? sample.start_index : -1;
  auto [state, cursor] = reset_from_clip(slot.clip, *rt.schema, cfg.world);
  slot.state = state;
  slot.cursor = cursor;
  slot.steps = 0;
  slot.ep_rewards.clear();
  slot.hist.reset();
}

}  // namespace detail

/// Rolls every environment for steps_per_env control steps against the frozen
/// policy and sampler. Episodes end at the clip end or the episode length
/// cap, record themselves for the scheduler, and the slot resets in place.
/// Rewards on masked reference frames are 0 scalars, flagged skipped, and
/// excluded from the episode records.
inline RolloutBatch collect_rollouts(const PolicyBundle& bundle, std::vector<detail::EnvSlot>& envs,
                                     const SamplerSnapshot& snap, const detail::TrainRuntime& rt,
                                     const TrainerConfig& cfg) {
  const int ne = static_cast<int>(envs.size());
  const int spe = cfg.steps_per_env;
  const int n = ne * spe;
  const auto& schema = *rt.schema;

  RolloutBatch batch;
  batch.n_envs = ne;
  batch.steps_per_env = spe;
  batch.inputs.resize(bundle.cfg.policy_in(), n);
  batch.actions.resize(bundle.cfg.action_dim, n);
  batch.logp.resize(n);
  batch.values.resize(n);
  batch.rewards.setZero(n);
  batch.skipped.assign(static_cast<std::size_t>(n), 0);
  batch.done.assign(static_cast<std::size_t>(n), 0);
  batch.bootstrap.setZero(n);

  Eigen::MatrixXd windows(bundle.cfg.window_dim(), ne);
  Eigen::MatrixXd h(bundle.cfg.history_dim, ne);
  Eigen::MatrixXd obs(bundle.cfg.obs_dim, ne);

  for (int t = 0; t < spe; ++t) {
    for (int e = 0; e < ne; ++e) {
      obs.col(e) = to_local_observation(frame_from_state(envs[static_cast<std::size_t>(e)].state, schema),
                                        schema);
      if (cfg.use.he) windows.col(e) = envs[static_cast<std::size_t>(e)].hist.flat();
    }
    if (cfg.use.he)
      h = net_forward(bundle.theta, windows);
    else
      h.setZero();

    for (int e = 0; e < ne; ++e) {
      const int i = batch.flat(e, t);
      batch.inputs.col(i) << bundle.cond_embed.col(envs[static_cast<std::size_t>(e)].skill), obs.col(e),
          h.col(e);
    }
    // batched policy mean + value for this time step
    Eigen::MatrixXd step_inputs(bundle.cfg.policy_in(), ne);
    for (int e = 0; e < ne; ++e) step_inputs.col(e) = batch.inputs.col(batch.flat(e, t));
    const Eigen::MatrixXd means = net_forward(bundle.phi, step_inputs);
    const Eigen::MatrixXd vals = net_forward(bundle.value, step_inputs);

    std::vector<int> done_envs;
    Eigen::MatrixXd done_inputs(bundle.cfg.policy_in(), ne);
    for (int e = 0; e < ne; ++e) {
      auto& slot = envs[static_cast<std::size_t>(e)];
      const int i = batch.flat(e, t);
      Eigen::VectorXd action = means.col(e);
      for (int d = 0; d < action.size(); ++d) action[d] += bundle.cfg.sigma * slot.rng.normal();
      batch.actions.col(i) = action;
      batch.logp[i] = gaussian_log_prob(action, means.col(e), bundle.cfg.sigma);
      batch.values[i] = vals(0, e);

      slot.state = step(slot.state, policy_world_action(action), cfg.world);
      slot.hist.push(obs.col(e));
      ++slot.steps;

      const Frame& ref = slot.clip.frames[static_cast<std::size_t>(slot.cursor)];
      if (ref.masked) {
        batch.skipped[static_cast<std::size_t>(i)] = 1;
      } else {
        const Frame simf = frame_from_state(slot.state, schema);
        const double r = reward_product(simf, ref, schema, rt.weights).value();
        batch.rewards[i] = r;
        slot.ep_rewards.push_back(r);
      }
      ++slot.cursor;

      const bool done = slot.cursor >= slot.clip.length() || slot.steps >= cfg.episode_len;
      const bool buffer_end = t == spe - 1;
      if (done || buffer_end) {
        // bootstrap from the post-step state
        Eigen::VectorXd next_obs = to_local_observation(frame_from_state(slot.state, schema), schema);
        Eigen::VectorXd next_h = Eigen::VectorXd::Zero(bundle.cfg.history_dim);
        if (cfg.use.he) next_h = he_encode(bundle, slot.hist.flat());
        done_inputs.col(static_cast<int>(done_envs.size()))
            << bundle.cond_embed.col(slot.skill), next_obs, next_h;
        done_envs.push_back(i);
      }
      if (done) {
        batch.done[static_cast<std::size_t>(i)] = 1;
        EpisodeRecord rec;
        rec.skill = slot.skill;
        rec.start_index = slot.start_index;
        rec.rewards = slot.ep_rewards;
        batch.episodes.push_back(std::move(rec));
        detail::reset_slot(slot, snap, rt, cfg);
      }
    }
    if (!done_envs.empty()) {
      const Eigen::MatrixXd boot =
          net_forward(bundle.value, done_inputs.leftCols(static_cast<int>(done_envs.size())));
      for (std::size_t k = 0; k < done_envs.size(); ++k)
        batch.bootstrap[done_envs[k]] = boot(0, static_cast<int>(k));
    }
  }

  // advantages/returns per maximal segment, reusing the plain recursion
  batch.advantages.resize(n);
  batch.returns.resize(n);
  std::vector<double> seg_r, seg_v, seg_adv, seg_ret;
  for (int e = 0; e < ne; ++e) {
    int t0 = 0;
    while (t0 < spe) {
      int t1 = t0;
      while (t1 < spe - 1 && !batch.done[static_cast<std::size_t>(batch.flat(e, t1))]) ++t1;
      const int len = t1 - t0 + 1;
      seg_r.assign(static_cast<std::size_t>(len), 0.0);
      seg_v.assign(static_cast<std::size_t>(len) + 1, 0.0);
      seg_adv.assign(static_cast<std::size_t>(len), 0.0);
      seg_ret.assign(static_cast<std::size_t>(len), 0.0);
      for (int t = t0; t <= t1; ++t) {
        seg_r[static_cast<std::size_t>(t - t0)] = batch.rewards[batch.flat(e, t)];
        seg_v[static_cast<std::size_t>(t - t0)] = batch.values[batch.flat(e, t)];
      }
      seg_v[static_cast<std::size_t>(len)] = batch.bootstrap[batch.flat(e, t1)];
      compute_gae(seg_r, seg_v, cfg.gamma, cfg.gae_lambda, seg_adv, seg_ret);
      for (int t = t0; t <= t1; ++t) {
        batch.advantages[batch.flat(e, t)] = seg_adv[static_cast<std::size_t>(t - t0)];
        batch.returns[batch.flat(e, t)] = seg_ret[static_cast<std::size_t>(t - t0)];
      }
      t0 = t1 + 1;
    }
  }
  return batch;
}

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Clipped-surrogate update on the policy mean net plus an MSE update on the
/// value net. The history encoder, predictor and condition embeddings are
/// never touched. Advantages are normalized over the whole batch.
inline PpoStats ppo_update(PolicyBundle& bundle, const RolloutBatch& batch, const TrainerConfig& cfg,
                           AdamOptimizer& opt_phi, AdamOptimizer& opt_value, Rng& rng) {
  const int n = batch.size();
  const double sigma = bundle.cfg.sigma;
  Eigen::VectorXd adv = batch.advantages;
  const double mean = adv.mean();
  adv.array() -= mean;
  const double stddev = std::sqrt(adv.squaredNorm() / n);
  adv /= std::max(stddev, 1e-8);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int mb = std::min(cfg.minibatch, n);

  PpoStats stats;
  int stat_batches = 0;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    rng.shuffle(order);
    for (int begin = 0; begin + mb <= n; begin += mb) {
      Eigen::MatrixXd x(bundle.cfg.policy_in(), mb);
      Eigen::MatrixXd a(bundle.cfg.action_dim, mb);
      Eigen::VectorXd adv_mb(mb), logp_old(mb), ret(mb);
      for (int k = 0; k < mb; ++k) {
        const int i = order[static_cast<std::size_t>(begin + k)];
        x.col(k) = batch.inputs.col(i);
        a.col(k) = batch.actions.col(i);
        adv_mb[k] = adv[i];
        logp_old[k] = batch.logp[i];
        ret[k] = batch.returns[i];
      }

      NetCache phi_cache;
      const Eigen::MatrixXd means = net_forward(bundle.phi, x, &phi_cache);
      Eigen::MatrixXd dmean = Eigen::MatrixXd::Zero(means.rows(), mb);
      double loss_pi = 0.0, kl = 0.0;
      int clipped = 0;
      for (int k = 0; k < mb; ++k) {
        const double logp_new = gaussian_log_prob(a.col(k), means.col(k), sigma);
        const double ratio = std::exp(logp_new - logp_old[k]);
        const double clamped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        const double surr = ratio * adv_mb[k];
        const double surr_clip = clamped * adv_mb[k];
        loss_pi -= std::min(surr, surr_clip) / mb;
        kl += (logp_old[k] - logp_new) / mb;
        if (clamped != ratio) ++clipped;
        if (surr <= surr_clip) {
          // gradient flows through the unclipped branch:
          // d(-ratio*A)/dmean = -A * ratio * (a - mean) / sigma^2
          dmean.col(k) = (-adv_mb[k] * ratio / (sigma * sigma * mb)) * (a.col(k) - means.col(k));
        }
      }
      NetGrads g_phi = NetGrads::zeros_like(bundle.phi);
      net_backward(bundle.phi, phi_cache, dmean, g_phi);
      opt_phi.step(bundle.phi, g_phi);

      NetCache v_cache;
      const Eigen::MatrixXd v = net_forward(bundle.value, x, &v_cache);
      const Eigen::VectorXd verr = v.row(0).transpose() - ret;
      const double loss_v = 0.5 * verr.squaredNorm() / mb;
      NetGrads g_v = NetGrads::zeros_like(bundle.value);
      Eigen::MatrixXd dv(1, mb);
      dv.row(0) = (verr / mb).transpose();
      net_backward(bundle.value, v_cache, dv, g_v);
      opt_value.step(bundle.value, g_v);

      if (!std::isfinite(loss_pi) || !std::isfinite(loss_v))
        throw TrainAbort("ppo_update: non-finite loss");
      stats.policy_loss += loss_pi;
      stats.value_loss += loss_v;
      stats.approx_kl += kl;
      stats.clip_fraction += static_cast<double>(clipped) / mb;
      ++stat_batches;
    }
  }
  if (stat_batches > 0) {
    stats.policy_loss /= stat_batches;
    stats.value_loss /= stat_batches;
    stats.approx_kl /= stat_batches;
    stats.clip_fraction /= stat_batches;
  }
  return stats;
}

struct TrainResult {
  PolicyBundle bundle;
  std::string out_dir;
  std::string metrics_path;
  std::string checkpoint_path;
  std::vector<double> pretrain_losses;
};

/// End-to-end training: optional history-encoder pre-training, stitched-graph
/// construction, then PPO iterations of freeze-sampler / collect / fold
/// scheduler stats / update. Writes manifest.txt, metrics.csv, pretrain
/// losses, checkpoints and the scheduler snapshot into out_dir.
inline TrainResult train(TrainerConfig cfg, const Dataset& ds, const std::string& out_dir,
                         const std::string& dataset_label = "") {
  namespace fs = std::filesystem;
  {
    const auto problems = validate(ds);
    if (!problems.empty())
      throw std::invalid_argument("train: invalid dataset: " + problems.front() + " (+" +
                                  std::to_string(problems.size() - 1) + " more)");
  }
  std::vector<std::string> skills;
  for (const auto& [name, trajs] : ds.skills) {
    if (trajs.size() != 1)
      throw std::invalid_argument("train: skill '" + name + "' must have exactly one trajectory");
    skills.push_back(name);
  }
  if (skills.empty()) throw std::invalid_argument("train: dataset has no skills");

  fs::create_directories(out_dir);
  cfg.policy.obs_dim = observation_dim(ds.schema);
  write_manifest(trainer_manifest(cfg, dataset_label, skills), (fs::path(out_dir) / "manifest.txt").string());

  Rng init_rng(cfg.seed, 0xA110);
  PolicyBundle bundle = make_policy_bundle(cfg.policy, skills, init_rng);

  TrainResult result;
  if (cfg.use.he) {
    Rng pre_rng(cfg.seed, 0xB00);
    result.pretrain_losses = pretrain_history_encoder(bundle, ds, cfg.pretrain, pre_rng);
    std::ofstream out(fs::path(out_dir) / "pretrain_loss.csv");
    out << "step,loss\n";
    for (std::size_t i = 0; i < result.pretrain_losses.size(); ++i)
      out << i << ',' << detail::format_double(result.pretrain_losses[i]) << "\n";
  }
  const std::string theta_before = net_fingerprint(bundle.theta);

  detail::TrainRuntime rt;
  rt.schema = &ds.schema;
  rt.weights = RewardWeights::from_schema(ds.schema);
  rt.fixup = world_frame_fixup(ds.schema, cfg.world);
  AugmentParams aug = cfg.aug;
  aug.p_neighborhood = cfg.use.stf ? aug.p_neighborhood : 0.0;
  aug.p_external = cfg.use.stg ? aug.p_external : 0.0;
  for (const auto& name : skills) {
    if (cfg.use.stg) {
      StitchedGraph g = build_stg(ds, name, aug, rt.weights);
      rt.graphs.push_back(std::move(g));
    } else {
      StitchedGraph g;
      g.target = ds.skills.at(name).front();
      g.params = aug;
      rt.graphs.push_back(std::move(g));
    }
  }

  AtsScheduler sched(cfg.ats);
  for (const auto& name : skills) {
    const auto& tr = ds.skills.at(name).front();
    std::vector<int> starts;
    for (int i = 0; i + 1 < tr.length(); ++i)
      if (tr.frames[static_cast<std::size_t>(i)].real()) starts.push_back(i);
    sched.add_skill(name, std::move(starts));
  }

  std::vector<detail::EnvSlot> envs(static_cast<std::size_t>(cfg.n_envs));
  {
    const SamplerSnapshot snap = freeze_sampler(sched, skills, cfg.ats, cfg.use.ats);
    for (int e = 0; e < cfg.n_envs; ++e) {
      auto& slot = envs[static_cast<std::size_t>(e)];
      slot.hist = HistoryBuffer(cfg.policy.obs_dim, cfg.policy.history_len);
      slot.rng = Rng(cfg.seed, 0xE000 + static_cast<std::uint64_t>(e));
      detail::reset_slot(slot, snap, rt, cfg);
    }
  }

  AdamOptimizer opt_phi(bundle.phi, cfg.adam_stepsize);
  AdamOptimizer opt_value(bundle.value, cfg.value_stepsize);
  Rng ppo_rng(cfg.seed, 0x5F1E);

  result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream metrics(result.metrics_path);
  metrics << "iteration,steps,nr,sr_proxy,policy_loss,value_loss,approx_kl,clip_fraction";
  for (const auto& s : skills) metrics << ",rbar_" << s;
  metrics << "\n";

  long long total_steps = 0;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const SamplerSnapshot snap = freeze_sampler(sched, skills, cfg.ats, cfg.use.ats);
    RolloutBatch batch = collect_rollouts(bundle, envs, snap, rt, cfg);
    total_steps += batch.size();

    double nr_sum = 0.0;
    int nr_n = 0;
    int successes = 0;
    for (const auto& ep : batch.episodes) {
      sched.record_episode(skills[static_cast<std::size_t>(ep.skill)], ep.start_index, ep.rewards);
      if (!ep.rewards.empty()) {
        const double m = std::accumulate(ep.rewards.begin(), ep.rewards.end(), 0.0) /
                         static_cast<double>(ep.rewards.size());
        nr_sum += m;
        ++nr_n;
        if (m >= 0.5) ++successes;
      }
    }
    const double nr = nr_n > 0 ? nr_sum / nr_n : 0.0;
    const double sr_proxy = nr_n > 0 ? static_cast<double>(successes) / nr_n : 0.0;

    PpoStats stats;
    try {
      stats = ppo_update(bundle, batch, cfg, opt_phi, opt_value, ppo_rng);
    } catch (const TrainAbort&) {
      std::ofstream dump(fs::path(out_dir) / "abort_dump.txt");
      dump << "iteration " << iter << "\nnr " << nr << "\n";
      dump << "batch advantages head:";
      for (int i = 0; i < std::min<int>(16, batch.size()); ++i) dump << ' ' << batch.advantages[i];
      dump << "\n";
      throw;
    }

    metrics << iter << ',' << total_steps << ',' << detail::format_double(nr) << ','
            << detail::format_double(sr_proxy) << ',' << detail::format_double(stats.policy_loss)
            << ',' << detail::format_double(stats.value_loss) << ','
            << detail::format_double(stats.approx_kl) << ','
            << detail::format_double(stats.clip_fraction);
    for (const auto& s : skills) metrics << ',' << detail::format_double(sched.class_reward(s));
    metrics << "\n";

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      save_policy_bundle(bundle,
                         (fs::path(out_dir) / ("checkpoint_" + std::to_string(iter + 1) + ".txt")).string());
    }
  }

  if (net_fingerprint(bundle.theta) != theta_before)
    throw std::logic_error("train: history encoder parameters changed during RL");

  result.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.txt").string();
  save_policy_bundle(bundle, result.checkpoint_path);
  {
    std::ofstream ats_out(fs::path(out_dir) / "ats_stats.txt");
    sched.save(ats_out);
  }
  result.bundle = std::move(bundle);
  result.out_dir = out_dir;
  return result;
}

}  // namespace rlid
