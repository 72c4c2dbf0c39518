#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/io.hpp"
#include "rlid/rng.hpp"

namespace rlid {

struct AtsConfig {
  double ema_alpha = 0.1;     // running-average fold-in rate for episode means
  double lambda_start = 10.0; // start-index curriculum sharpness
  double lambda_class = 5.0;  // inter-class curriculum sharpness
};

namespace detail {

/// Softmax of -lambda * rbar, max-shifted. Exactly shift invariant and
/// exactly uniform at lambda == 0.
inline std::vector<double> negative_softmax(std::span<const double> rbar, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("negative_softmax: lambda must be >= 0");
  std::vector<double> p(rbar.size());
  if (rbar.empty()) return p;
  double m = -lambda * rbar[0];
  for (std::size_t i = 1; i < rbar.size(); ++i) m = std::max(m, -lambda * rbar[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < rbar.size(); ++i) {
    p[i] = std::exp(-lambda * rbar[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace detail

/// Difficulty bookkeeping for the adaptive curricula: a running mean reward
/// per (skill, start index) and per skill class. Unvisited entries stay at 0,
/// which is maximal priority under the negative softmax, so coverage is
/// driven by optimism. Readers may run concurrently; updates are meant to be
/// applied in a single aggregation phase between rollout collections.
class AtsScheduler {
 public:
  explicit AtsScheduler(AtsConfig cfg = {}) : cfg_(cfg) {}

  const AtsConfig& config() const { return cfg_; }

  /// Registers a skill with the start indices that may begin an episode
  /// (masked reference frames are excluded by the caller).
  void add_skill(const std::string& name, std::vector<int> start_indices) {
    if (stats_.count(name)) throw std::invalid_argument("add_skill: duplicate skill '" + name + "'");
    if (start_indices.empty()) throw std::invalid_argument("add_skill: no start indices");
    SkillStats st;
    st.start_indices = std::move(start_indices);
    st.rbar.assign(st.start_indices.size(), 0.0);
    st.visits.assign(st.start_indices.size(), 0);
    order_.push_back(name);
    stats_.emplace(name, std::move(st));
  }

  const std::vector<std::string>& skill_names() const { return order_; }
  const std::vector<int>& start_indices(const std::string& skill) const { return at(skill).start_indices; }

  /// Folds one finished episode into the running means. `rewards` holds the
  /// per-frame rewards of the non-skipped frames only. `start_index < 0`
  /// marks an externally stitched start, which updates the class mean only.
  void record_episode(const std::string& skill, int start_index, std::span<const double> rewards) {
    auto& st = at(skill);
    if (rewards.empty()) {
      std::cerr << "ats: ignoring empty-reward episode for skill '" << skill << "'\n";
      return;
    }
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    if (start_index >= 0) {
      const int slot = st.slot_of(start_index);
      if (slot < 0)
        throw std::invalid_argument("record_episode: start index " + std::to_string(start_index) +
                                    " not registered for skill '" + skill + "'");
      st.rbar[static_cast<std::size_t>(slot)] =
          (1.0 - cfg_.ema_alpha) * st.rbar[static_cast<std::size_t>(slot)] + cfg_.ema_alpha * mean;
      ++st.visits[static_cast<std::size_t>(slot)];
    }
    st.class_rbar = (1.0 - cfg_.ema_alpha) * st.class_rbar + cfg_.ema_alpha * mean;
    ++st.episodes;
  }

  /// Start-index curriculum: p_i proportional to exp(-lambda_s * rbar_i),
  /// aligned with start_indices(skill). lambda_s == 0 is exactly uniform.
  std::vector<double> start_distribution(const std::string& skill, double lambda_s) const {
    return detail::negative_softmax(at(skill).rbar, lambda_s);
  }

  int sample_start(const std::string& skill, double lambda_s, Rng& rng) const {
    const auto& st = at(skill);
    const auto p = detail::negative_softmax(st.rbar, lambda_s);
    return st.start_indices[static_cast<std::size_t>(rng.categorical(p))];
  }

  /// Inter-class curriculum over skills, in registration order.
  std::vector<double> skill_distribution(double lambda_c) const {
    std::vector<double> class_rbar;
    class_rbar.reserve(order_.size());
    for (const auto& name : order_) class_rbar.push_back(at(name).class_rbar);
    return detail::negative_softmax(class_rbar, lambda_c);
  }

  const std::string& sample_skill(double lambda_c, Rng& rng) const {
    const auto p = skill_distribution(lambda_c);
    return order_[static_cast<std::size_t>(rng.categorical(p))];
  }

  double mean_reward(const std::string& skill, int start_index) const {
    const auto& st = at(skill);
    const int slot = st.slot_of(start_index);
    if (slot < 0) throw std::invalid_argument("mean_reward: unknown start index");
    return st.rbar[static_cast<std::size_t>(slot)];
  }

  long long visit_count(const std::string& skill, int start_index) const {
    const auto& st = at(skill);
    const int slot = st.slot_of(start_index);
    if (slot < 0) throw std::invalid_argument("visit_count: unknown start index");
    return st.visits[static_cast<std::size_t>(slot)];
  }

  double class_reward(const std::string& skill) const { return at(skill).class_rbar; }
  long long episode_count(const std::string& skill) const { return at(skill).episodes; }

  /// Text snapshot (skill, index, rbar, count) plus the class rows; used for
  /// checkpointing and for the stats CLI.
  void save(std::ostream& out) const {
    out << "ats-stats v1\n";
    for (const auto& name : order_) {
      const auto& st = at(name);
      out << "skill " << name << ' ' << detail_fmt(st.class_rbar) << ' ' << st.episodes << "\n";
      for (std::size_t i = 0; i < st.start_indices.size(); ++i)
        out << "start " << st.start_indices[i] << ' ' << detail_fmt(st.rbar[i]) << ' ' << st.visits[i]
            << "\n";
    }
  }

  static AtsScheduler load(std::istream& in, AtsConfig cfg = {}) {
    AtsScheduler s(cfg);
    std::string line;
    if (!std::getline(in, line) || line != "ats-stats v1")
      throw std::runtime_error("ats stats: bad header");
    SkillStats* cur = nullptr;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream iss(line);
      std::string tag;
      iss >> tag;
      if (tag == "skill") {
        std::string name;
        double rbar;
        long long eps;
        iss >> name >> rbar >> eps;
        if (!iss) throw std::runtime_error("ats stats: bad skill row");
        s.order_.push_back(name);
        auto [it, ok] = s.stats_.emplace(name, SkillStats{});
        if (!ok) throw std::runtime_error("ats stats: duplicate skill row");
        cur = &it->second;
        cur->class_rbar = rbar;
        cur->episodes = eps;
      } else if (tag == "start") {
        if (!cur) throw std::runtime_error("ats stats: start row before skill row");
        int idx;
        double rbar;
        long long visits;
        iss >> idx >> rbar >> visits;
        if (!iss) throw std::runtime_error("ats stats: bad start row");
        cur->start_indices.push_back(idx);
        cur->rbar.push_back(rbar);
        cur->visits.push_back(visits);
      } else {
        throw std::runtime_error("ats stats: unknown row '" + tag + "'");
      }
    }
    return s;
  }

 private:
  struct SkillStats {
    std::vector<int> start_indices;
    std::vector<double> rbar;
    std::vector<long long> visits;
    double class_rbar = 0.0;
    long long episodes = 0;

    int slot_of(int start_index) const {
      auto it = std::find(start_indices.begin(), start_indices.end(), start_index);
      return it == start_indices.end() ? -1 : static_cast<int>(it - start_indices.begin());
    }
  };

  static std::string detail_fmt(double v) { return detail::format_double(v); }

  const SkillStats& at(const std::string& skill) const {
    auto it = stats_.find(skill);
    if (it == stats_.end()) throw std::invalid_argument("ats: unknown skill '" + skill + "'");
    return it->second;
  }
  SkillStats& at(const std::string& skill) {
    auto it = stats_.find(skill);
    if (it == stats_.end()) throw std::invalid_argument("ats: unknown skill '" + skill + "'");
    return it->second;
  }

  AtsConfig cfg_;
  std::vector<std::string> order_;
  std::map<std::string, SkillStats> stats_;
};

}  // namespace rlid
