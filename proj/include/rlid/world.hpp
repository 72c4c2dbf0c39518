#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/rng.hpp"
#include "rlid/schema.hpp"
#include "rlid/stitch.hpp"

namespace rlid {

/// Physical constants of the 2D hand-ball world. The simulator integrates at
/// sim_hz with control decisions every `substeps` integrator steps.
struct WorldParams {
  double gravity = 9.8;
  double restitution = 0.8;
  double hand_max_accel = 40.0;
  double contact_radius = 0.12;
  double grab_blend = 0.5;  // ball-to-hand velocity blend per substep while grabbed
  double dt_sim = 1.0 / 120.0;
  int substeps = 2;  // control period = substeps * dt_sim
  double ball_radius = 0.1;
  double floor_y = 0.0;
  double rest_speed = 0.1;  // bounces slower than this come to rest

  double control_dt() const { return dt_sim * substeps; }
};

struct WorldState {
  Eigen::Vector2d hand_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d hand_vel = Eigen::Vector2d::Zero();
  Eigen::Vector2d ball_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d ball_vel = Eigen::Vector2d::Zero();
  double ball_rot = 0.0;
  double ball_rotvel = 0.0;
  bool contact_hand_ball = false;
  bool contact_ball_floor = false;
};

/// Control input: hand acceleration in units of hand_max_accel (so (0,-1) is
/// a full-strength downward push) plus a grab activation in [0,1].
struct Action {
  Eigen::Vector2d accel = Eigen::Vector2d::Zero();
  double grab = 0.0;
};

inline bool hand_ball_contact(const WorldState& s, const WorldParams& p) {
  return (s.hand_pos - s.ball_pos).norm() <= p.contact_radius;
}

inline bool ball_floor_contact(const WorldState& s, const WorldParams& p) {
  return s.ball_pos.y() - p.ball_radius - p.floor_y <= 1e-9;
}

inline void refresh_contacts(WorldState& s, const WorldParams& p) {
  s.contact_hand_ball = hand_ball_contact(s, p);
  s.contact_ball_floor = ball_floor_contact(s, p);
}

/// Advances one control step (substeps x semi-implicit Euler). While the hand
/// grabs the ball (contact and grab > 0.5) the ball's velocity blends toward
/// the hand's and gravity is carried by the hand; otherwise the ball is
/// ballistic and bounces on the floor with the restitution coefficient.
/// Micro-bounces below rest_speed come to rest exactly on the floor. The
/// ball-floor flag latches any touch during the step; the hand-ball flag is
/// the post-step geometric predicate. Pure function: identical inputs give
/// bit-identical outputs.
inline WorldState step(const WorldState& s0, const Action& action, const WorldParams& p) {
  if (!action.accel.allFinite() || !std::isfinite(action.grab))
    throw std::invalid_argument("step: non-finite action");
  Eigen::Vector2d a = action.accel * p.hand_max_accel;
  const double norm = a.norm();
  if (norm > p.hand_max_accel) a *= p.hand_max_accel / norm;

  WorldState s = s0;
  bool floor_touch = false;
  for (int k = 0; k < p.substeps; ++k) {
    const bool grabbed = action.grab > 0.5 && hand_ball_contact(s, p);
    s.hand_vel += a * p.dt_sim;
    s.hand_pos += s.hand_vel * p.dt_sim;
    if (grabbed) {
      s.ball_vel += p.grab_blend * (s.hand_vel - s.ball_vel);
    } else {
      s.ball_vel.y() -= p.gravity * p.dt_sim;
    }
    s.ball_pos += s.ball_vel * p.dt_sim;
    s.ball_rot += s.ball_rotvel * p.dt_sim;
    const double lowest = p.floor_y + p.ball_radius;
    if (s.ball_pos.y() < lowest) {
      s.ball_pos.y() = lowest;
      if (s.ball_vel.y() < 0.0) {
        const double rebound = -p.restitution * s.ball_vel.y();
        s.ball_vel.y() = rebound < p.rest_speed ? 0.0 : rebound;
      }
      floor_touch = true;
    }
  }
  s.contact_hand_ball = hand_ball_contact(s, p);
  s.contact_ball_floor = floor_touch || ball_floor_contact(s, p);
  return s;
}

/// Canonical schema of this world. Weights follow the multiplicative-kernel
/// configuration (position and relative groups at 20, object position at 1,
/// velocities at 0, contact pairs at 5); neighborhood half-widths are 0.1 on
/// every perturbable group.
inline StateSchema toy_schema() {
  StateSchema s;
  s.name = "hand-ball-2d";
  s.groups = {
      {"hand-pos", GroupKind::RobotPos, 2},    {"hand-vel", GroupKind::RobotVel, 2},
      {"ball-pos", GroupKind::ObjPos, 2},      {"ball-vel", GroupKind::ObjPosVel, 2},
      {"ball-rot", GroupKind::ObjRot, 1},      {"ball-rotvel", GroupKind::ObjRotVel, 1},
      {"rel", GroupKind::Relative, 2},         {"contact", GroupKind::Contact, 2},
  };
  auto one = [](double v) { return Eigen::VectorXd::Constant(1, v); };
  s.lambda["hand-pos"] = one(20.0);
  s.lambda["hand-vel"] = one(0.0);
  s.lambda["ball-pos"] = one(1.0);
  s.lambda["ball-vel"] = one(0.0);
  s.lambda["ball-rot"] = one(0.0);
  s.lambda["ball-rotvel"] = one(0.0);
  s.lambda["rel"] = one(20.0);
  s.lambda["contact"] = Eigen::VectorXd::Constant(2, 5.0);
  for (const auto& g : s.groups) s.epsilon[g.name] = 0.1;
  s.epsilon["contact"] = 0.0;
  return s;
}

inline Frame frame_from_state(const WorldState& w, const StateSchema& s) {
  Frame f = Frame::zero(s);
  group_values(f, s, "hand-pos") = w.hand_pos;
  group_values(f, s, "hand-vel") = w.hand_vel;
  group_values(f, s, "ball-pos") = w.ball_pos;
  group_values(f, s, "ball-vel") = w.ball_vel;
  group_values(f, s, "ball-rot")[0] = w.ball_rot;
  group_values(f, s, "ball-rotvel")[0] = w.ball_rotvel;
  group_values(f, s, "rel") = w.ball_pos - w.hand_pos;
  f.contacts[0] = w.contact_hand_ball ? 1.0 : 0.0;
  f.contacts[1] = w.contact_ball_floor ? 1.0 : 0.0;
  return f;
}

/// Rebuilds a world state from a frame's channels. The relative group and
/// stored contact flags are ignored: contacts are recomputed geometrically
/// and the ball is clamped above the floor, so physically inconsistent
/// (noisy or perturbed) frames still yield a legal state.
inline WorldState state_from_frame(const Frame& f, const StateSchema& s, const WorldParams& p) {
  if (f.masked) throw std::invalid_argument("state_from_frame: masked frame");
  WorldState w;
  w.hand_pos = group_values(f, s, "hand-pos");
  w.hand_vel = group_values(f, s, "hand-vel");
  w.ball_pos = group_values(f, s, "ball-pos");
  w.ball_vel = group_values(f, s, "ball-vel");
  w.ball_rot = group_values(f, s, "ball-rot")[0];
  w.ball_rotvel = group_values(f, s, "ball-rotvel")[0];
  w.ball_pos.y() = std::max(w.ball_pos.y(), p.floor_y + p.ball_radius);
  refresh_contacts(w, p);
  return w;
}

/// Post-perturbation repair used by neighborhood sampling: keep the ball
/// above the floor.
inline FrameFixup world_frame_fixup(const StateSchema& s, const WorldParams& p) {
  const int gi = s.group_index("ball-pos");
  if (gi < 0) return {};
  const int off = s.group_offset(static_cast<std::size_t>(gi));
  const double lowest = p.floor_y + p.ball_radius;
  return [off, lowest](Frame& f) { f.values[off + 1] = std::max(f.values[off + 1], lowest); };
}

enum class Skill { Dribble, Carry, Toss };

inline std::string_view skill_name(Skill s) {
  switch (s) {
    case Skill::Dribble: return "dribble";
    case Skill::Carry: return "carry";
    case Skill::Toss: return "toss";
  }
  return "?";
}

inline std::optional<Skill> skill_from_name(std::string_view s) {
  if (s == "dribble") return Skill::Dribble;
  if (s == "carry") return Skill::Carry;
  if (s == "toss") return Skill::Toss;
  return std::nullopt;
}

namespace controllers {

inline constexpr double kDribbleHomeY = 0.85;
inline constexpr double kDribbleReleaseDrop = 0.12;
inline constexpr double kCarryHomeY = 0.5;
inline constexpr double kCarryCruise = 0.6;
inline constexpr double kTossLaunchVy = 3.5;

inline double pd(double err, double vel, double kp, double kd) { return kp * err - kd * vel; }

/// Bounce the ball off the floor and catch it again near the hand's home
/// height. Decisions depend only on the current state, so the controller
/// resumes correctly from any state along (or near) its own cycle: catch at
/// home and push down hard; keep pushing until the release line; once the
/// ball is caught below home, lift it back up first; if the ball is loose,
/// wait above it (descending to its apex when a bounce comes up short).
inline Action dribble_policy(const WorldState& s, const WorldParams& p) {
  Action a;
  const bool prox = (s.hand_pos - s.ball_pos).norm() <= p.contact_radius;
  const double release_y = kDribbleHomeY - kDribbleReleaseDrop;
  const double track_x = pd(s.ball_pos.x() - s.hand_pos.x(), s.hand_vel.x(), 30.0, 8.0);
  a.accel.x() = track_x / p.hand_max_accel;
  if (prox) {
    const bool push_start = s.hand_pos.y() >= kDribbleHomeY - 0.02 && s.ball_vel.y() <= 2.5;
    const bool push_committed = s.ball_vel.y() <= -0.3 && s.hand_pos.y() > release_y;
    if (push_start || push_committed) {
      a.grab = 1.0;
      a.accel.y() = -1.0;
      return a;
    }
    if (s.ball_vel.y() > -0.3) {
      // caught low: lift the ball back through the push line, arriving with
      // enough upward momentum to hand over to the push
      const double vy_des = std::clamp(4.0 * (kDribbleHomeY + 0.04 - s.hand_pos.y()), 0.4, 2.2);
      a.grab = 1.0;
      a.accel.y() = std::clamp(12.0 * (vy_des - s.hand_vel.y()) / p.hand_max_accel, -1.0, 1.0);
      return a;
    }
    // ball falling past the hand right after release: let it go
  }
  double target_y = kDribbleHomeY;
  const bool ball_rising = s.ball_vel.y() > 0.3;
  const bool ball_resting = s.ball_pos.y() < p.floor_y + p.ball_radius + 0.05 &&
                            std::abs(s.ball_vel.y()) <= 0.3;
  if (!prox && s.ball_pos.y() < s.hand_pos.y() && (ball_rising || ball_resting)) {
    // meet a weak bounce at its apex (or a dead ball on the floor) instead
    // of waiting out of reach
    const double rise = ball_rising ? s.ball_vel.y() * s.ball_vel.y() / (2.0 * p.gravity) : 0.0;
    const double apex = s.ball_pos.y() + rise;
    if (apex < kDribbleHomeY - 0.10)
      target_y = std::max(p.floor_y + p.ball_radius + 0.02, apex - 0.02);
  }
  a.grab = 0.0;
  a.accel.y() = pd(target_y - s.hand_pos.y(), s.hand_vel.y(), 50.0, 14.0) / p.hand_max_accel;
  return a;
}

/// Hold the ball and translate at a steady cruise velocity; if the ball is
/// loose, chase it first.
inline Action carry_policy(const WorldState& s, const WorldParams& p) {
  Action a;
  const bool prox = (s.hand_pos - s.ball_pos).norm() <= p.contact_radius;
  a.grab = 1.0;
  if (!prox) {
    const Eigen::Vector2d rel = s.ball_pos - s.hand_pos;
    a.accel = (Eigen::Vector2d(pd(rel.x(), s.hand_vel.x(), 60.0, 12.0),
                               pd(rel.y(), s.hand_vel.y(), 60.0, 12.0)) /
               p.hand_max_accel);
    return a;
  }
  a.accel = {8.0 * (kCarryCruise - s.hand_vel.x()) / p.hand_max_accel,
             pd(kCarryHomeY - s.hand_pos.y(), s.hand_vel.y(), 50.0, 14.0) / p.hand_max_accel};
  return a;
}

/// Fling the held ball up-forward until it reaches launch speed, then let go
/// and pull the hand back down out of its path. The launch state is readable
/// from geometry alone: a fast-rising ball, or a rising ball already clear
/// above the hand, is in flight and must not be re-grabbed.
inline Action toss_policy(const WorldState& s, const WorldParams& p) {
  Action a;
  const bool prox = (s.hand_pos - s.ball_pos).norm() <= p.contact_radius;
  const bool launched = s.ball_vel.y() >= kTossLaunchVy ||
                        (s.ball_pos.y() > s.hand_pos.y() + 0.03 && s.ball_vel.y() > 0.3);
  if (prox && !launched) {
    a.grab = 1.0;
    a.accel = {std::numbers::sqrt2 / 2.0, std::numbers::sqrt2 / 2.0};
    return a;
  }
  a.grab = 0.0;
  a.accel = {-0.2 * s.hand_vel.x(),
             pd(kCarryHomeY - s.hand_pos.y(), s.hand_vel.y(), 50.0, 12.0) / p.hand_max_accel};
  return a;
}

inline Action oracle_policy(Skill skill, const WorldState& s, const WorldParams& p) {
  switch (skill) {
    case Skill::Dribble: return dribble_policy(s, p);
    case Skill::Carry: return carry_policy(s, p);
    case Skill::Toss: return toss_policy(s, p);
  }
  throw std::invalid_argument("oracle_policy: unknown skill");
}

}  // namespace controllers

struct ScriptedDemo {
  Trajectory traj;
  std::vector<Action> actions;  // one per transition
  std::vector<WorldState> states;
  int hold_begin = -1;  // frame range of the static hold phase, when present
  int hold_end = -1;
};

namespace detail {

inline WorldState demo_initial_state(Skill skill, const WorldParams& p) {
  WorldState w;
  const double y = skill == Skill::Dribble ? controllers::kDribbleHomeY : controllers::kCarryHomeY;
  w.hand_pos = {0.0, y};
  w.ball_pos = {0.0, y};
  refresh_contacts(w, p);
  return w;
}

template <typename ActionFn>
ScriptedDemo roll_script(const WorldState& init, int n_steps, const WorldParams& p,
                         const StateSchema& schema, ActionFn&& act_at) {
  ScriptedDemo demo;
  demo.traj.dt = p.control_dt();
  demo.states.push_back(init);
  demo.traj.frames.push_back(frame_from_state(init, schema));
  WorldState s = init;
  for (int t = 0; t < n_steps; ++t) {
    const Action a = act_at(t, s);
    s = step(s, a, p);
    demo.actions.push_back(a);
    demo.states.push_back(s);
    demo.traj.frames.push_back(frame_from_state(s, schema));
  }
  return demo;
}

}  // namespace detail

/// Demonstration with a fixed approach/hold/fling script: settle, accelerate
/// to cruise_vx, cruise, brake, hold for hold_frames, then fling up-forward
/// and release. Used for toss demos and for hold-duration datasets.
inline ScriptedDemo generate_drive_hold_toss(double cruise_vx, int hold_frames, int total_steps,
                                             const WorldParams& p, const StateSchema& schema) {
  const int settle = 4, accel_frames = 6, decel_frames = 3, pre_hold = 36, fling_frames = 8;
  if (hold_frames < 1) throw std::invalid_argument("generate_drive_hold_toss: hold too short");
  const double dt = p.control_dt();
  const double a_cruise = cruise_vx / (accel_frames * dt);
  const double a_brake = -cruise_vx / (decel_frames * dt);
  const int hold_begin = pre_hold;
  const int hold_end = pre_hold + hold_frames;  // exclusive
  auto script = [&](int t, const WorldState& s) {
    Action a;
    a.grab = 1.0;
    double ax = 0.0;
    if (t < settle) {
      ax = 0.0;
    } else if (t < settle + accel_frames) {
      ax = a_cruise;
    } else if (t < pre_hold - decel_frames) {
      ax = 0.0;
    } else if (t < pre_hold) {
      ax = a_brake;
    } else if (t < hold_end) {
      ax = controllers::pd(0.0, s.hand_vel.x(), 0.0, 30.0);  // damp residual drift
    } else if (t < hold_end + fling_frames) {
      a.accel = {std::numbers::sqrt2 / 2.0, std::numbers::sqrt2 / 2.0};
      return a;
    } else {
      a.grab = 0.0;
      a.accel = {-0.3 * s.hand_vel.x() / 1.0, -0.3 * s.hand_vel.y()};
      return a;
    }
    a.accel = {ax / p.hand_max_accel,
               controllers::pd(controllers::kCarryHomeY - s.hand_pos.y(), s.hand_vel.y(), 50.0, 14.0) /
                   p.hand_max_accel};
    return a;
  };
  if (total_steps < hold_end + fling_frames + 2)
    throw std::invalid_argument("generate_drive_hold_toss: total too short for the script");
  ScriptedDemo demo =
      detail::roll_script(detail::demo_initial_state(Skill::Carry, p), total_steps, p, schema, script);
  demo.hold_begin = hold_begin;
  demo.hold_end = hold_end;
  return demo;
}

/// Static hold: grab the ball and keep it still at the carry home pose.
inline ScriptedDemo generate_hold_demo(double seconds, const WorldParams& p, const StateSchema& schema) {
  const int n = static_cast<int>(std::lround(seconds / p.control_dt()));
  auto script = [&](int, const WorldState& s) {
    Action a;
    a.grab = 1.0;
    a.accel = {controllers::pd(0.0 - s.hand_pos.x(), s.hand_vel.x(), 50.0, 14.0) / p.hand_max_accel,
               controllers::pd(controllers::kCarryHomeY - s.hand_pos.y(), s.hand_vel.y(), 50.0, 14.0) /
                   p.hand_max_accel};
    return a;
  };
  ScriptedDemo d =
      detail::roll_script(detail::demo_initial_state(Skill::Carry, p), n, p, schema, script);
  d.hold_begin = 0;
  d.hold_end = n;
  return d;
}

inline ScriptedDemo generate_demo_with_actions(Skill skill, double seconds, const WorldParams& p,
                                               const StateSchema& schema) {
  if (!(seconds >= 1.0 && seconds <= 3.0))
    throw std::invalid_argument("generate_demo: duration must be in [1,3] seconds");
  const int n = static_cast<int>(std::lround(seconds / p.control_dt()));
  ScriptedDemo demo;
  switch (skill) {
    case Skill::Dribble:
      demo = detail::roll_script(
          detail::demo_initial_state(skill, p), n, p, schema,
          [&](int, const WorldState& s) { return controllers::dribble_policy(s, p); });
      break;
    case Skill::Carry:
      demo = detail::roll_script(
          detail::demo_initial_state(skill, p), n, p, schema,
          [&](int, const WorldState& s) { return controllers::carry_policy(s, p); });
      break;
    case Skill::Toss:
      demo = generate_drive_hold_toss(0.4, 12, n, p, schema);
      break;
  }
  demo.traj.skill = std::string(skill_name(skill));
  return demo;
}

/// Scripted demonstration trajectory, exactly physically consistent because
/// it is recorded from the simulator itself.
inline Trajectory generate_demo(Skill skill, double seconds, const WorldParams& p,
                                const StateSchema& schema) {
  return generate_demo_with_actions(skill, seconds, p, schema).traj;
}

/// Controlled degradation: independent uniform [-sigma, sigma] noise on the
/// object position channels (the relative group is re-derived from the noisy
/// ball), plus one contiguous interior block of ceil(drop_fraction * n)
/// frames replaced by masked frames. Deterministic under the rng seed.
inline Trajectory corrupt(const Trajectory& traj, double sigma, double drop_fraction,
                          const StateSchema& schema, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("corrupt: negative sigma");
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0))
    throw std::invalid_argument("corrupt: drop_fraction must be in [0,1)");
  const int n = traj.length();
  const int drop = static_cast<int>(std::ceil(drop_fraction * n));
  if (drop > 0 && drop > n - 2)
    throw std::invalid_argument("corrupt: drop would mask an endpoint");
  int drop_begin = -1;
  if (drop > 0) drop_begin = 1 + rng.index(static_cast<std::size_t>(n - 1 - drop));

  Trajectory out = traj;
  const int rel_gi = schema.group_index("rel");
  for (int i = 0; i < n; ++i) {
    Frame& f = out.frames[static_cast<std::size_t>(i)];
    if (drop_begin >= 0 && i >= drop_begin && i < drop_begin + drop) {
      f = Frame::masked_frame();
      continue;
    }
    if (f.masked || sigma == 0.0) continue;
    for (std::size_t gi = 0; gi < schema.groups.size(); ++gi) {
      const auto& g = schema.groups[gi];
      if (g.kind != GroupKind::ObjPos) continue;
      const int off = schema.group_offset(gi);
      for (int d = 0; d < g.dim; ++d) f.values[off + d] += rng.uniform(-sigma, sigma);
    }
    if (rel_gi >= 0)
      group_values(f, schema, "rel") =
          group_values(f, schema, "ball-pos") - group_values(f, schema, "hand-pos");
  }
  return out;
}

struct SuccessParams {
  double window_s = 1.0;  // dribble: longest tolerated gap without an event
  double carry_min_contact_fraction = 0.9;
  double carry_min_displacement = 0.5;
  double toss_window_lo = 0.6;  // forward ball displacement window
  double toss_window_hi = 3.0;
  double free_ball_speed = 0.5;
};

namespace detail {

inline bool events_cover(const std::vector<int>& events, int n_frames, int max_gap) {
  int prev = 0;
  for (int e : events) {
    if (e - prev > max_gap) return false;
    prev = e;
  }
  return n_frames - 1 - prev <= max_gap;
}

}  // namespace detail

/// Skill success predicates over a rollout sampled at the control rate.
/// These are concrete toy substitutes for qualitative success notions:
///  - dribble: neither floor contacts nor hand contacts ever pause for more
///    than window_s seconds;
///  - carry: the hand holds the ball at least the required fraction of the
///    time and travels the required net distance;
///  - toss: started holding, the ball must later cross the forward
///    displacement window while rising and free; started in flight, reaching
///    the window suffices.
inline bool is_success(Skill skill, std::span<const WorldState> rollout, const WorldParams& p,
                       const SuccessParams& sp = {}) {
  if (rollout.size() < 2) return false;
  const int n = static_cast<int>(rollout.size());
  switch (skill) {
    case Skill::Dribble: {
      const int max_gap = static_cast<int>(std::lround(sp.window_s / p.control_dt()));
      std::vector<int> floor_events, hand_events;
      for (int i = 0; i < n; ++i) {
        if (rollout[static_cast<std::size_t>(i)].contact_ball_floor) floor_events.push_back(i);
        if (rollout[static_cast<std::size_t>(i)].contact_hand_ball) hand_events.push_back(i);
      }
      if (floor_events.empty() || hand_events.empty()) return false;
      return detail::events_cover(floor_events, n, max_gap) &&
             detail::events_cover(hand_events, n, max_gap);
    }
    case Skill::Carry: {
      int held = 0;
      for (const auto& s : rollout) held += s.contact_hand_ball ? 1 : 0;
      const double frac = static_cast<double>(held) / n;
      const double disp = (rollout.back().hand_pos - rollout.front().hand_pos).norm();
      return frac >= sp.carry_min_contact_fraction && disp >= sp.carry_min_displacement;
    }
    case Skill::Toss: {
      const WorldState& s0 = rollout.front();
      const bool held0 = (s0.hand_pos - s0.ball_pos).norm() <= p.contact_radius;
      if (!held0 && s0.ball_vel.x() > sp.free_ball_speed) {
        // ball already in flight: completing the throw means covering the
        // forward window from here
        const double x0 = s0.ball_pos.x();
        for (const auto& s : rollout)
          if (s.ball_pos.x() - x0 >= sp.toss_window_lo) return true;
        return false;
      }
      // started holding: after release the ball must cross the forward
      // window while still rising and free of the hand
      int t_rel = -1;
      for (int i = 0; i < n; ++i) {
        if ((rollout[static_cast<std::size_t>(i)].hand_pos -
             rollout[static_cast<std::size_t>(i)].ball_pos)
                .norm() > p.contact_radius) {
          t_rel = i;
          break;
        }
      }
      if (t_rel < 0) return false;
      const double x_rel = rollout[static_cast<std::size_t>(t_rel)].ball_pos.x();
      for (int i = t_rel; i < n; ++i) {
        const auto& s = rollout[static_cast<std::size_t>(i)];
        const double dx = s.ball_pos.x() - x_rel;
        if (dx >= sp.toss_window_lo) {
          const bool free = (s.hand_pos - s.ball_pos).norm() > p.contact_radius;
          return dx <= sp.toss_window_hi && s.ball_vel.y() > 0.0 && free;
        }
      }
      return false;
    }
  }
  throw std::invalid_argument("is_success: unknown skill");
}

}  // namespace rlid
