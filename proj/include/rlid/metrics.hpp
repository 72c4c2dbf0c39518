#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rlid/policy.hpp"
#include "rlid/reward.hpp"
#include "rlid/stitch.hpp"
#include "rlid/trainer.hpp"
#include "rlid/world.hpp"

namespace rlid {

/// A per-trial action source. Each trial gets a fresh instance from the
/// factory so stateful policies (history buffers) start clean.
using TrialPolicy = std::function<Action(const WorldState&)>;
using TrialPolicyFactory = std::function<TrialPolicy()>;

/// Deterministic (sigma = 0) policy over a trained bundle, conditioned on one
/// skill. Stateful: carries its own history window.
inline TrialPolicyFactory bundle_policy(const PolicyBundle& bundle, const std::string& condition_skill,
                                        const StateSchema& schema, bool use_history = true) {
  const int skill_idx = bundle.skill_index(condition_skill);
  return [&bundle, &schema, skill_idx, use_history]() -> TrialPolicy {
    auto hist = std::make_shared<HistoryBuffer>(bundle.cfg.obs_dim, bundle.cfg.history_len);
    return [&bundle, &schema, skill_idx, use_history, hist](const WorldState& s) {
      const Eigen::VectorXd obs = to_local_observation(frame_from_state(s, schema), schema);
      Eigen::VectorXd h = Eigen::VectorXd::Zero(bundle.cfg.history_dim);
      if (use_history) h = he_encode(bundle, hist->flat());
      const ActResult r = act(bundle, skill_idx, obs, h, 0.0, nullptr);
      hist->push(obs);
      return policy_world_action(r.action);
    };
  };
}

inline TrialPolicyFactory scripted_policy(Skill skill, const WorldParams& wp) {
  return [skill, &wp]() -> TrialPolicy {
    return [skill, &wp](const WorldState& s) { return controllers::oracle_policy(skill, s, wp); };
  };
}

inline TrialPolicyFactory zero_policy() {
  return []() -> TrialPolicy { return [](const WorldState&) { return Action{}; }; };
}

struct EvalOptions {
  int trials = 1000;
  int horizon_steps = 300;  // 5 s at 60 Hz; stands in for the 10 s protocol
  std::uint64_t seed = 0;
};

struct EvalResult {
  double value = 0.0;
  double ci_halfwidth = 0.0;
  int trials = 0;
  int horizon_steps = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline const Trajectory& eval_trajectory(const Dataset& ds, const std::string& skill) {
  auto it = ds.skills.find(skill);
  if (it == ds.skills.end() || it->second.empty())
    throw std::invalid_argument("eval: unknown skill '" + skill + "'");
  return it->second.front();
}

inline std::vector<int> valid_start_indices(const Trajectory& tr) {
  std::vector<int> out;
  for (int i = 0; i + 1 < tr.length(); ++i)
    if (tr.frames[static_cast<std::size_t>(i)].real()) out.push_back(i);
  if (out.empty()) throw std::invalid_argument("eval: trajectory has no usable start states");
  return out;
}

inline StateSchema scaled_epsilon_schema(const StateSchema& s, double scale) {
  StateSchema out = s;
  for (auto& [name, eps] : out.epsilon) eps *= scale;
  return out;
}

inline std::vector<WorldState> run_trial(const TrialPolicy& policy, const WorldState& init,
                                         int horizon_steps, const WorldParams& wp) {
  std::vector<WorldState> states;
  states.reserve(static_cast<std::size_t>(horizon_steps) + 1);
  states.push_back(init);
  WorldState s = init;
  for (int t = 0; t < horizon_steps; ++t) {
    s = step(s, policy(s), wp);
    states.push_back(s);
  }
  return states;
}

}  // namespace detail

/// Success-rate core shared by SR, TSR and the neighborhood variant: start
/// states are drawn uniformly over the real reference indices of
/// `from_skill`, optionally perturbed by epsilon_scale times the schema
/// neighborhood, and judged with `judge_skill`'s success predicate. With
/// epsilon_scale == 0 this consumes exactly the same random draws as the
/// unperturbed evaluation, so the two coincide bit for bit under one seed.
inline EvalResult eval_success_rate(const TrialPolicyFactory& make_policy, const Dataset& ds,
                                    const std::string& from_skill, Skill judge_skill,
                                    double epsilon_scale, const EvalOptions& opt,
                                    const WorldParams& wp, const SuccessParams& sp = {}) {
  if (opt.trials < 1) throw std::invalid_argument("eval: trials must be >= 1");
  const Trajectory& tr = detail::eval_trajectory(ds, from_skill);
  const auto starts = detail::valid_start_indices(tr);
  const StateSchema eps_schema = detail::scaled_epsilon_schema(ds.schema, epsilon_scale);
  const FrameFixup fixup = world_frame_fixup(ds.schema, wp);
  int successes = 0;
  for (int trial = 0; trial < opt.trials; ++trial) {
    Rng rng(opt.seed, 0x77A1 + static_cast<std::uint64_t>(trial));
    const int start = starts[static_cast<std::size_t>(rng.index(starts.size()))];
    Frame f = tr.frames[static_cast<std::size_t>(start)];
    f = epsilon_nsi(f, eps_schema, rng, fixup);
    const WorldState init = state_from_frame(f, ds.schema, wp);
    const auto states = detail::run_trial(make_policy(), init, opt.horizon_steps, wp);
    if (is_success(judge_skill, states, wp, sp)) ++successes;
  }
  EvalResult r;
  r.trials = opt.trials;
  r.horizon_steps = opt.horizon_steps;
  r.seed = opt.seed;
  r.value = static_cast<double>(successes) / opt.trials;
  r.ci_halfwidth = 1.96 * std::sqrt(r.value * (1.0 - r.value) / opt.trials);
  return r;
}

/// Success rate from the skill's own reference starts.
inline EvalResult eval_sr(const TrialPolicyFactory& policy, const Dataset& ds, const std::string& skill,
                          const EvalOptions& opt, const WorldParams& wp, const SuccessParams& sp = {}) {
  const auto sk = skill_from_name(skill);
  if (!sk) throw std::invalid_argument("eval_sr: unknown skill '" + skill + "'");
  return eval_success_rate(policy, ds, skill, *sk, 0.0, opt, wp, sp);
}

/// Transition success rate: start from `from_skill` reference states, judge
/// with `to_skill`'s predicate. The policy factory must already be
/// conditioned on `to_skill`.
inline EvalResult eval_tsr(const TrialPolicyFactory& policy, const Dataset& ds,
                           const std::string& from_skill, const std::string& to_skill,
                           const EvalOptions& opt, const WorldParams& wp,
                           const SuccessParams& sp = {}) {
  const auto to = skill_from_name(to_skill);
  if (!to) throw std::invalid_argument("eval_tsr: unknown skill '" + to_skill + "'");
  return eval_success_rate(policy, ds, from_skill, *to, 0.0, opt, wp, sp);
}

/// Neighborhood success rate: reference starts perturbed by epsilon_scale
/// times the schema's per-group half-widths.
inline EvalResult eval_ensr(const TrialPolicyFactory& policy, const Dataset& ds,
                            const std::string& skill, double epsilon_scale, const EvalOptions& opt,
                            const WorldParams& wp, const SuccessParams& sp = {}) {
  const auto sk = skill_from_name(skill);
  if (!sk) throw std::invalid_argument("eval_ensr: unknown skill '" + skill + "'");
  return eval_success_rate(policy, ds, skill, *sk, epsilon_scale, opt, wp, sp);
}

/// Mean per-frame imitation reward against the reference, averaged over
/// trials from uniform reference starts. Rollouts are scored over the frames
/// the reference still covers.
inline EvalResult eval_nr(const TrialPolicyFactory& make_policy, const Dataset& ds,
                          const std::string& skill, const EvalOptions& opt, const WorldParams& wp) {
  if (opt.trials < 1) throw std::invalid_argument("eval: trials must be >= 1");
  const Trajectory& tr = detail::eval_trajectory(ds, skill);
  const auto starts = detail::valid_start_indices(tr);
  const RewardWeights w = RewardWeights::from_schema(ds.schema);
  std::vector<double> per_trial;
  per_trial.reserve(static_cast<std::size_t>(opt.trials));
  for (int trial = 0; trial < opt.trials; ++trial) {
    Rng rng(opt.seed, 0x77A1 + static_cast<std::uint64_t>(trial));
    const int start = starts[static_cast<std::size_t>(rng.index(starts.size()))];
    WorldState s = state_from_frame(tr.frames[static_cast<std::size_t>(start)], ds.schema, wp);
    const TrialPolicy policy = make_policy();
    std::vector<std::optional<double>> rewards;
    const int steps = std::min(opt.horizon_steps, tr.length() - 1 - start);
    for (int t = 0; t < steps; ++t) {
      s = step(s, policy(s), wp);
      const Frame& ref = tr.frames[static_cast<std::size_t>(start + t + 1)];
      if (ref.masked) {
        rewards.emplace_back(std::nullopt);
      } else {
        rewards.emplace_back(reward_product(frame_from_state(s, ds.schema), ref, ds.schema, w));
      }
    }
    if (!rewards.empty()) per_trial.push_back(normalized_reward(rewards));
  }
  if (per_trial.empty()) throw std::invalid_argument("eval_nr: no scorable trials");
  EvalResult r;
  r.trials = static_cast<int>(per_trial.size());
  r.horizon_steps = opt.horizon_steps;
  r.seed = opt.seed;
  double mean = 0.0;
  for (double v : per_trial) mean += v;
  mean /= static_cast<double>(per_trial.size());
  double var = 0.0;
  for (double v : per_trial) var += (v - mean) * (v - mean);
  var /= static_cast<double>(per_trial.size());
  r.value = mean;
  r.ci_halfwidth = 1.96 * std::sqrt(var / static_cast<double>(per_trial.size()));
  return r;
}

struct EvalCsvRow {
  std::string metric;
  std::string skill_pair;
  double epsilon_scale = 0.0;
  EvalResult result;
};

inline void write_eval_csv(const std::vector<EvalCsvRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "metric,skill_pair,epsilon,trials,value,ci_halfwidth,horizon_steps,seed\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << r.skill_pair << ',' << detail::format_double(r.epsilon_scale) << ','
        << r.result.trials << ',' << detail::format_double(r.result.value) << ','
        << detail::format_double(r.result.ci_halfwidth) << ',' << r.result.horizon_steps << ','
        << r.result.seed << "\n";
  }
}

}  // namespace rlid
