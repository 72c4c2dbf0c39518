#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "rlid/schema.hpp"

namespace rlid {

/// Per-group reward weights. The default set comes straight from the schema;
/// alternative kernels (e.g. the additive one) are built with their own map.
struct RewardWeights {
  std::map<std::string, Eigen::VectorXd> lambda;

  static RewardWeights from_schema(const StateSchema& s) { return RewardWeights{s.lambda}; }

  double scalar(const std::string& gname) const {
    auto it = lambda.find(gname);
    if (it == lambda.end()) throw std::invalid_argument("no reward weight for group '" + gname + "'");
    return it->second[0];
  }

  const Eigen::VectorXd& vector(const std::string& gname) const {
    auto it = lambda.find(gname);
    if (it == lambda.end()) throw std::invalid_argument("no reward weight for group '" + gname + "'");
    return it->second;
  }
};

/// exp(-lambda * MSE). MSE is the mean (not sum) of squared channel errors,
/// so the same weight works for groups of any width.
inline double group_reward(const Eigen::Ref<const Eigen::VectorXd>& sim,
                           const Eigen::Ref<const Eigen::VectorXd>& ref, double lambda) {
  if (sim.size() != ref.size()) throw std::invalid_argument("group_reward: length mismatch");
  if (lambda < 0.0) throw std::invalid_argument("group_reward: negative lambda");
  if (sim.size() == 0) return 1.0;
  const double mse = (sim - ref).squaredNorm() / static_cast<double>(sim.size());
  return std::exp(-lambda * mse);
}

/// exp(-sum_j lambda[j] * |sim_j - ref_j|) over 0/1 contact flags. All-zero
/// weights disable the term (returns exactly 1).
inline double contact_reward(const Eigen::Ref<const Eigen::VectorXd>& sim,
                             const Eigen::Ref<const Eigen::VectorXd>& ref,
                             const Eigen::Ref<const Eigen::VectorXd>& lambda_cg) {
  if (sim.size() != ref.size() || sim.size() != lambda_cg.size())
    throw std::invalid_argument("contact_reward: length mismatch");
  double acc = 0.0;
  for (int j = 0; j < sim.size(); ++j) acc += lambda_cg[j] * std::abs(sim[j] - ref[j]);
  return std::exp(-acc);
}

namespace detail {

inline void check_real_pair(const Frame& sim, const Frame& ref, const StateSchema& s,
                            const char* who) {
  if (sim.values.size() != s.value_dim() || ref.values.size() != s.value_dim() ||
      sim.contacts.size() != s.contact_pairs() || ref.contacts.size() != s.contact_pairs())
    throw std::invalid_argument(std::string(who) + ": schema mismatch");
}

inline double product_over_groups(const Frame& sim, const Frame& ref, const StateSchema& s,
                                  const RewardWeights& w) {
  double r = 1.0;
  for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
    const auto& g = s.groups[gi];
    if (g.kind == GroupKind::Contact) continue;
    const int off = s.group_offset(gi);
    r *= group_reward(sim.values.segment(off, g.dim), ref.values.segment(off, g.dim), w.scalar(g.name));
  }
  return r;
}

}  // namespace detail

/// Multiplicative imitation reward: the product of one exponential-MSE factor
/// per non-contact group times the contact factor. Bounded in (0,1]. Returns
/// nullopt (skipped) when the reference frame is masked — buffer frames never
/// shape the reward.
inline std::optional<double> reward_product(const Frame& sim, const Frame& ref,
                                            const StateSchema& schema, const RewardWeights& w) {
  if (sim.masked) throw std::invalid_argument("reward_product: simulated frame is masked");
  if (ref.masked) return std::nullopt;
  detail::check_real_pair(sim, ref, schema, "reward_product");
  double r = detail::product_over_groups(sim, ref, schema, w);
  if (schema.contact_pairs() > 0) {
    const int gi = [&] {
      for (std::size_t i = 0; i < schema.groups.size(); ++i)
        if (schema.groups[i].kind == GroupKind::Contact) return static_cast<int>(i);
      return -1;
    }();
    const auto& g = schema.groups[static_cast<std::size_t>(gi)];
    r *= contact_reward(sim.contacts, ref.contacts, w.vector(g.name));
  }
  return r;
}

/// Additive kernel: the sum of exponential-MSE terms over the robot position,
/// robot rotation, robot rotation-velocity and object position groups.
inline std::optional<double> reward_additive(const Frame& sim, const Frame& ref,
                                             const StateSchema& schema, const RewardWeights& w) {
  if (sim.masked) throw std::invalid_argument("reward_additive: simulated frame is masked");
  if (ref.masked) return std::nullopt;
  detail::check_real_pair(sim, ref, schema, "reward_additive");
  double r = 0.0;
  for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
    const auto& g = schema.groups[gi];
    if (g.kind != GroupKind::RobotPos && g.kind != GroupKind::RobotRot &&
        g.kind != GroupKind::RobotRotVel && g.kind != GroupKind::ObjPos)
      continue;
    const int off = schema.group_offset(gi);
    r += group_reward(sim.values.segment(off, g.dim), ref.values.segment(off, g.dim), w.scalar(g.name));
  }
  return r;
}

/// State similarity used for neighborhood matching and stitching: the
/// multiplicative reward without its contact factor. Symmetric.
inline double kinematic_similarity(const Frame& a, const Frame& b, const StateSchema& schema,
                                   const RewardWeights& w) {
  if (a.masked || b.masked) throw std::invalid_argument("kinematic_similarity: masked input");
  detail::check_real_pair(a, b, schema, "kinematic_similarity");
  return detail::product_over_groups(a, b, schema, w);
}

/// Mean reward per frame over the non-skipped entries. An all-skipped
/// sequence yields 0 (documented degenerate case); empty input is an error.
inline double normalized_reward(std::span<const std::optional<double>> rewards) {
  if (rewards.empty()) throw std::invalid_argument("normalized_reward: empty sequence");
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rewards) {
    if (!r) continue;
    sum += *r;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

}  // namespace rlid
