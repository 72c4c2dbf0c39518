#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlid {

/// Channel-group roles. Positional kinds are expressed in world coordinates
/// and participate in root-relative observation transforms and root
/// alignment; the relative kind is already a difference of positions and is
/// translation invariant by construction.
enum class GroupKind {
  RobotPos,
  RobotVel,
  RobotRot,
  RobotRotVel,
  ObjPos,
  ObjRot,
  ObjPosVel,
  ObjRotVel,
  Relative,
  Contact,
};

inline std::string_view kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::RobotPos: return "robot-pos";
    case GroupKind::RobotVel: return "robot-vel";
    case GroupKind::RobotRot: return "robot-rot";
    case GroupKind::RobotRotVel: return "robot-rotvel";
    case GroupKind::ObjPos: return "obj-pos";
    case GroupKind::ObjRot: return "obj-rot";
    case GroupKind::ObjPosVel: return "obj-posvel";
    case GroupKind::ObjRotVel: return "obj-rotvel";
    case GroupKind::Relative: return "relative";
    case GroupKind::Contact: return "contact";
  }
  return "?";
}

inline std::optional<GroupKind> kind_from_name(std::string_view s) {
  using K = GroupKind;
  for (K k : {K::RobotPos, K::RobotVel, K::RobotRot, K::RobotRotVel, K::ObjPos, K::ObjRot,
              K::ObjPosVel, K::ObjRotVel, K::Relative, K::Contact}) {
    if (kind_name(k) == s) return k;
  }
  return std::nullopt;
}

inline bool is_positional(GroupKind k) { return k == GroupKind::RobotPos || k == GroupKind::ObjPos; }

struct ChannelGroup {
  std::string name;
  GroupKind kind = GroupKind::RobotPos;
  int dim = 0;
};

/// Declares the named channel groups of a state, their reward weights and
/// their neighborhood half-widths. All reward, similarity, perturbation and
/// observation code is driven by this declaration, so the same kernels serve
/// any embodiment that can describe itself as a list of groups.
struct StateSchema {
  std::string name;
  std::vector<ChannelGroup> groups;
  /// Reward weight per group; scalar groups hold one value, the contact
  /// group holds one weight per contact pair.
  std::map<std::string, Eigen::VectorXd> lambda;
  /// Neighborhood half-width per group (same units as the group).
  std::map<std::string, double> epsilon;

  /// Total dimension of the non-contact channels, in declaration order.
  int value_dim() const {
    int d = 0;
    for (const auto& g : groups)
      if (g.kind != GroupKind::Contact) d += g.dim;
    return d;
  }

  /// Number of contact pairs J (0 when no contact group is declared).
  int contact_pairs() const {
    for (const auto& g : groups)
      if (g.kind == GroupKind::Contact) return g.dim;
    return 0;
  }

  /// Offset of group `gi` into the flat value vector; -1 for the contact group.
  int group_offset(std::size_t gi) const {
    int off = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i == gi) return groups[i].kind == GroupKind::Contact ? -1 : off;
      if (groups[i].kind != GroupKind::Contact) off += groups[i].dim;
    }
    throw std::out_of_range("StateSchema::group_offset: bad group index");
  }

  int group_index(std::string_view gname) const {
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i].name == gname) return static_cast<int>(i);
    return -1;
  }

  /// Index of the root group (the first robot-pos group), -1 if absent.
  int root_group() const {
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i].kind == GroupKind::RobotPos) return static_cast<int>(i);
    return -1;
  }

  const Eigen::VectorXd& lambda_of(const std::string& gname) const {
    auto it = lambda.find(gname);
    if (it == lambda.end()) throw std::invalid_argument("schema: no lambda for group " + gname);
    return it->second;
  }

  double epsilon_of(const std::string& gname) const {
    auto it = epsilon.find(gname);
    if (it == epsilon.end()) throw std::invalid_argument("schema: no epsilon for group " + gname);
    return it->second;
  }

  /// Schema-level invariant violations; empty when well-formed.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    int contact_groups = 0;
    std::map<std::string, int> seen;
    for (const auto& g : groups) {
      if (++seen[g.name] == 2) out.push_back("duplicate group name '" + g.name + "'");
      if (g.kind == GroupKind::Contact) {
        ++contact_groups;
        if (g.dim < 0) out.push_back("contact group '" + g.name + "' has negative dim");
      } else if (g.dim < 1) {
        out.push_back("group '" + g.name + "' has dim < 1");
      }
      if (is_positional(g.kind) && g.dim % 2 != 0)
        out.push_back("positional group '" + g.name + "' must have an even dim ((x,y) pairs)");
      auto lit = lambda.find(g.name);
      if (lit == lambda.end()) {
        out.push_back("missing lambda for group '" + g.name + "'");
      } else {
        const int want = g.kind == GroupKind::Contact ? g.dim : 1;
        if (lit->second.size() != want)
          out.push_back("lambda for group '" + g.name + "' has wrong arity");
        if ((lit->second.array() < 0.0).any())
          out.push_back("negative lambda for group '" + g.name + "'");
      }
      auto eit = epsilon.find(g.name);
      if (eit == epsilon.end())
        out.push_back("missing epsilon for group '" + g.name + "'");
      else if (eit->second < 0.0)
        out.push_back("negative epsilon for group '" + g.name + "'");
    }
    if (contact_groups > 1) out.push_back("more than one contact group");
    return out;
  }
};

/// One time step. A masked frame is a pure buffer: it carries no values at
/// all and can never contribute to rewards or observations.
struct Frame {
  bool masked = true;
  Eigen::VectorXd values;    // schema.value_dim() entries when real
  Eigen::VectorXd contacts;  // J entries in {0,1} when real

  bool real() const { return !masked; }

  static Frame masked_frame() { return Frame{}; }

  static Frame zero(const StateSchema& s) {
    Frame f;
    f.masked = false;
    f.values = Eigen::VectorXd::Zero(s.value_dim());
    f.contacts = Eigen::VectorXd::Zero(s.contact_pairs());
    return f;
  }
};

inline Eigen::Ref<Eigen::VectorXd> group_values(Frame& f, const StateSchema& s, std::string_view gname) {
  const int gi = s.group_index(gname);
  if (gi < 0) throw std::invalid_argument(std::string("unknown group '") + std::string(gname) + "'");
  if (f.masked) throw std::invalid_argument("group_values: masked frame");
  const auto& g = s.groups[static_cast<std::size_t>(gi)];
  if (g.kind == GroupKind::Contact) return f.contacts.head(g.dim);
  return f.values.segment(s.group_offset(static_cast<std::size_t>(gi)), g.dim);
}

inline Eigen::Ref<const Eigen::VectorXd> group_values(const Frame& f, const StateSchema& s,
                                                      std::string_view gname) {
  return group_values(const_cast<Frame&>(f), s, gname);
}

/// Reference trajectory: an ordered frame sequence with a skill condition
/// label and a fixed frame period.
struct Trajectory {
  std::string skill;
  double dt = 1.0 / 60.0;
  std::vector<Frame> frames;

  int length() const { return static_cast<int>(frames.size()); }
};

struct Dataset {
  StateSchema schema;
  std::map<std::string, std::vector<Trajectory>> skills;
};

namespace detail {
inline void check_frame_dims(const Frame& f, const StateSchema& s, const std::string& where,
                             std::vector<std::string>& out) {
  if (f.masked) return;
  if (f.values.size() != s.value_dim())
    out.push_back(where + ": dim mismatch (frame has " + std::to_string(f.values.size()) +
                  " values, schema wants " + std::to_string(s.value_dim()) + ")");
  if (f.contacts.size() != s.contact_pairs())
    out.push_back(where + ": dim mismatch (frame has " + std::to_string(f.contacts.size()) +
                  " contact flags, schema wants " + std::to_string(s.contact_pairs()) + ")");
}
}  // namespace detail

/// Report-style validation; returns the list of invariant violations and is
/// empty exactly when the dataset is well-formed. Never throws.
inline std::vector<std::string> validate(const Dataset& ds) {
  std::vector<std::string> out = ds.schema.violations();
  for (const auto& [skill, trajs] : ds.skills) {
    for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
      const auto& tr = trajs[ti];
      const std::string where = skill + "[" + std::to_string(ti) + "]";
      if (tr.skill != skill) out.push_back(where + ": skill label mismatch");
      if (tr.dt <= 0.0) out.push_back(where + ": nonpositive dt");
      if (tr.frames.size() < 2) {
        out.push_back(where + ": fewer than 2 frames");
        continue;
      }
      if (tr.frames.front().masked) out.push_back(where + ": masked endpoint (first frame)");
      if (tr.frames.back().masked) out.push_back(where + ": masked endpoint (last frame)");
      for (std::size_t fi = 0; fi < tr.frames.size(); ++fi)
        detail::check_frame_dims(tr.frames[fi], ds.schema, where + " frame " + std::to_string(fi), out);
    }
  }
  return out;
}

/// Flattens a real frame into the policy observation: positional channels are
/// re-expressed relative to the robot root in the horizontal direction, the
/// root keeps its absolute height, everything else is copied verbatim, and
/// the contact flags are appended as 0/1 values.
inline Eigen::VectorXd to_local_observation(const Frame& f, const StateSchema& s) {
  if (f.masked) throw std::invalid_argument("no observation for masked frame");
  const int rg = s.root_group();
  Eigen::VectorXd obs(s.value_dim() + s.contact_pairs());
  obs.head(s.value_dim()) = f.values;
  if (rg >= 0) {
    const int roff = s.group_offset(static_cast<std::size_t>(rg));
    const double rx = f.values[roff];
    const double ry = f.values[roff + 1];
    for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
      const auto& g = s.groups[gi];
      if (!is_positional(g.kind)) continue;
      const int off = s.group_offset(gi);
      for (int p = 0; p < g.dim; p += 2) {
        obs[off + p] -= rx;
        const bool root_height = (static_cast<int>(gi) == rg && p == 0);
        if (!root_height) obs[off + p + 1] -= ry;
      }
    }
  }
  obs.tail(s.contact_pairs()) = f.contacts;
  return obs;
}

inline int observation_dim(const StateSchema& s) { return s.value_dim() + s.contact_pairs(); }

}  // namespace rlid
