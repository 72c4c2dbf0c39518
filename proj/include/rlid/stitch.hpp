#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/reward.hpp"
#include "rlid/rng.hpp"
#include "rlid/schema.hpp"

namespace rlid {

struct AugmentParams {
  double p_external = 0.1;      // probability of starting from a stitched external state
  double p_neighborhood = 0.1;  // probability of perturbing the chosen centroid
  double tau = 1e-10;           // similarity acceptance threshold (inclusive)
  int max_masks = 10;
};

/// A validated stitch from an external state into the target trajectory.
struct Connection {
  Frame source;          // already root-aligned to the entry frame
  int entry_index = 0;   // matched frame index in the target trajectory
  int mask_count = 0;
  double similarity = 1.0;
  Eigen::Vector2d shift = Eigen::Vector2d::Zero();  // translation applied to the source
};

/// Target trajectory plus every accepted external connection into it.
struct StitchedGraph {
  Trajectory target;
  std::vector<Connection> external;
  AugmentParams params;
};

/// Hook for world-specific repairs after a perturbation (e.g. clamping the
/// ball above the floor). Identity when empty.
using FrameFixup = std::function<void(Frame&)>;

/// Index of the most similar real frame plus that similarity. Ties break to
/// the smallest index. `last_index` bounds the scan (inclusive); -1 scans the
/// whole trajectory.
inline std::pair<int, double> nearest_reference(const Frame& state, const Trajectory& traj,
                                                const StateSchema& schema, const RewardWeights& w,
                                                int last_index = -1) {
  if (state.masked) throw std::invalid_argument("nearest_reference: masked query state");
  const int n = traj.length();
  const int last = last_index < 0 ? n - 1 : std::min(last_index, n - 1);
  int best = -1;
  double best_sim = -1.0;
  for (int j = 0; j <= last; ++j) {
    if (traj.frames[static_cast<std::size_t>(j)].masked) continue;
    const double s = kinematic_similarity(state, traj.frames[static_cast<std::size_t>(j)], schema, w);
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  if (best < 0) throw std::invalid_argument("nearest_reference: trajectory has no real frames");
  return {best, best_sim};
}

/// Number of buffer frames a connection of similarity `beta` needs:
/// min(-floor(log10(beta)), max_masks). Returns nullopt when beta < tau
/// (connection rejected); beta == tau is accepted.
inline std::optional<int> mask_count(double beta, double tau, int max_masks) {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("mask_count: beta must be in (0,1]");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("mask_count: tau must be in (0,1)");
  if (max_masks < 0) throw std::invalid_argument("mask_count: negative max_masks");
  if (beta < tau) return std::nullopt;
  const int n = static_cast<int>(-std::floor(std::log10(beta)));
  return std::min(std::max(n, 0), max_masks);
}

/// Translates every positional channel of `state` by one (x,y) shift so that
/// its root lands on `target`'s root. Velocities, rotations, the relative
/// group and contacts are untouched.
inline Frame align_root_xy(const Frame& state, const Frame& target, const StateSchema& schema) {
  if (state.masked || target.masked) throw std::invalid_argument("align_root_xy: masked input");
  const int rg = schema.root_group();
  if (rg < 0) throw std::invalid_argument("align_root_xy: schema has no robot-pos group");
  const int roff = schema.group_offset(static_cast<std::size_t>(rg));
  const Eigen::Vector2d shift(target.values[roff] - state.values[roff],
                              target.values[roff + 1] - state.values[roff + 1]);
  Frame out = state;
  for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
    const auto& g = schema.groups[gi];
    if (!is_positional(g.kind)) continue;
    const int off = schema.group_offset(gi);
    for (int p = 0; p < g.dim; p += 2) {
      out.values[off + p] += shift.x();
      out.values[off + p + 1] += shift.y();
    }
  }
  return out;
}

/// Builds the sampled clip {start, mask x N, s_{j+1}, ..., s_T}: the start
/// state takes the place of the matched frame, N buffer frames bridge the
/// gap, and the rest of the trajectory is copied. The skill condition and dt
/// are inherited. `entry_index` must point at a real frame before the last.
inline Trajectory assemble_clip(const Frame& start, const Trajectory& traj, int entry_index,
                                int n_masks) {
  const int n = traj.length();
  if (start.masked) throw std::invalid_argument("assemble_clip: masked start state");
  if (entry_index < 0 || entry_index >= n - 1 ||
      traj.frames[static_cast<std::size_t>(entry_index)].masked)
    throw std::invalid_argument("assemble_clip: invalid entry index " + std::to_string(entry_index));
  if (n_masks < 0) throw std::invalid_argument("assemble_clip: negative mask count");
  Trajectory clip;
  clip.skill = traj.skill;
  clip.dt = traj.dt;
  clip.frames.reserve(static_cast<std::size_t>(1 + n_masks + (n - 1 - entry_index)));
  clip.frames.push_back(start);
  for (int i = 0; i < n_masks; ++i) clip.frames.push_back(Frame::masked_frame());
  for (int i = entry_index + 1; i < n; ++i) clip.frames.push_back(traj.frames[static_cast<std::size_t>(i)]);
  return clip;
}

/// Builds the stitched graph for `target_skill`: every real frame of every
/// other skill's trajectories is root-aligned against each candidate entry of
/// the target, matched by kinematic similarity, and kept when the connection
/// rule accepts it. Pure function of (dataset, params, weights).
inline StitchedGraph build_stg(const Dataset& ds, const std::string& target_skill,
                               const AugmentParams& params, const RewardWeights& w) {
  if (ds.skills.empty()) throw std::invalid_argument("build_stg: empty dataset");
  auto it = ds.skills.find(target_skill);
  if (it == ds.skills.end() || it->second.empty())
    throw std::invalid_argument("build_stg: unknown target skill '" + target_skill + "'");
  StitchedGraph stg;
  stg.target = it->second.front();
  stg.params = params;
  const Trajectory& a = stg.target;
  const int last = a.length() - 2;  // entries must leave at least one following frame
  for (const auto& [skill, trajs] : ds.skills) {
    if (skill == target_skill) continue;
    for (const auto& tr : trajs) {
      for (const auto& b : tr.frames) {
        if (b.masked) continue;
        int best_j = -1;
        double best_sim = -1.0;
        Frame best_aligned;
        for (int j = 0; j <= last; ++j) {
          if (a.frames[static_cast<std::size_t>(j)].masked) continue;
          Frame aligned = align_root_xy(b, a.frames[static_cast<std::size_t>(j)], ds.schema);
          const double s =
              kinematic_similarity(aligned, a.frames[static_cast<std::size_t>(j)], ds.schema, w);
          if (s > best_sim) {
            best_sim = s;
            best_j = j;
            best_aligned = std::move(aligned);
          }
        }
        if (best_j < 0 || best_sim <= 0.0) continue;  // underflowed similarity: too distant
        const auto n = mask_count(best_sim, params.tau, params.max_masks);
        if (!n) continue;  // too distant, connection discarded
        Connection c;
        c.entry_index = best_j;
        c.mask_count = *n;
        c.similarity = best_sim;
        const int roff = ds.schema.group_offset(static_cast<std::size_t>(ds.schema.root_group()));
        c.shift = Eigen::Vector2d(best_aligned.values[roff] - b.values[roff],
                                  best_aligned.values[roff + 1] - b.values[roff + 1]);
        c.source = std::move(best_aligned);
        stg.external.push_back(std::move(c));
      }
    }
  }
  return stg;
}

/// Uniform neighborhood perturbation: every channel of every non-contact
/// group moves by an independent draw from [-eps_g, +eps_g]. Contacts are
/// unchanged. The optional fixup applies world-specific clamps afterwards.
inline Frame epsilon_nsi(const Frame& f, const StateSchema& schema, Rng& rng,
                         const FrameFixup& fixup = {}) {
  if (f.masked) throw std::invalid_argument("epsilon_nsi: masked frame");
  Frame out = f;
  for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
    const auto& g = schema.groups[gi];
    if (g.kind == GroupKind::Contact) continue;
    const double eps = schema.epsilon_of(g.name);
    if (eps <= 0.0) continue;
    const int off = schema.group_offset(gi);
    for (int i = 0; i < g.dim; ++i) out.values[off + i] += rng.uniform(-eps, eps);
  }
  if (fixup) fixup(out);
  return out;
}

/// One sampled clip plus the bookkeeping the augment manifest reports.
struct ClipSample {
  Trajectory clip;
  enum class Source { Reference, External } source = Source::Reference;
  int start_index = -1;       // index into the target trajectory (Reference source)
  int connection_index = -1;  // index into stg.external (External source)
  bool perturbed = false;
  bool fallback = false;  // perturbation kept rejecting; fell back to the centroid
  int entry_index = 0;
  int mask_count = 0;
  double similarity = 1.0;
};

/// Online augmentation sampling: choose a centroid (external connection with
/// probability p_external, otherwise a start index of the target drawn from
/// `start_probs` over `start_indices`), perturb it with probability
/// p_neighborhood, connect it to the target and assemble the clip. A
/// perturbed centroid whose connection is rejected is redrawn a bounded
/// number of times, then the unperturbed centroid is used (flagged).
inline ClipSample sample_augmented(const StitchedGraph& stg, std::span<const int> start_indices,
                                   std::span<const double> start_probs, const StateSchema& schema,
                                   const RewardWeights& w, Rng& rng, const FrameFixup& fixup = {}) {
  if (start_indices.size() != start_probs.size() || start_indices.empty())
    throw std::invalid_argument("sample_augmented: bad start distribution");
  const AugmentParams& p = stg.params;
  const Trajectory& a = stg.target;
  const int last = a.length() - 2;

  ClipSample out;
  Frame centroid;
  if (!stg.external.empty() && rng.bernoulli(p.p_external)) {
    out.source = ClipSample::Source::External;
    out.connection_index = rng.index(stg.external.size());
    centroid = stg.external[static_cast<std::size_t>(out.connection_index)].source;
  } else {
    out.source = ClipSample::Source::Reference;
    out.start_index = start_indices[static_cast<std::size_t>(rng.categorical(start_probs))];
    centroid = a.frames[static_cast<std::size_t>(out.start_index)];
  }

  Frame start = centroid;
  int entry = -1;
  int masks = 0;
  double beta = 1.0;
  bool resolved = false;
  if (rng.bernoulli(p.p_neighborhood)) {
    constexpr int kMaxAttempts = 8;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      Frame cand = epsilon_nsi(centroid, schema, rng, fixup);
      const auto [j, b] = nearest_reference(cand, a, schema, w, last);
      if (b <= 0.0) continue;  // similarity underflow: rejected
      if (const auto n = mask_count(b, p.tau, p.max_masks)) {
        start = std::move(cand);
        entry = j;
        masks = *n;
        beta = b;
        out.perturbed = true;
        resolved = true;
        break;
      }
    }
    if (!resolved) out.fallback = true;
  }
  if (!resolved) {
    const auto [j, b] = nearest_reference(start, a, schema, w, last);
    const auto n = mask_count(b, p.tau, p.max_masks);
    if (!n)
      throw std::logic_error("sample_augmented: unperturbed centroid rejected (inconsistent graph)");
    entry = j;
    masks = *n;
    beta = b;
  }
  out.entry_index = entry;
  out.mask_count = masks;
  out.similarity = beta;
  out.clip = assemble_clip(start, a, entry, masks);
  return out;
}

}  // namespace rlid
