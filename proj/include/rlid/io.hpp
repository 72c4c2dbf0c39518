#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/schema.hpp"

namespace rlid {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Full-precision decimal text; round-trips doubles exactly through strtod.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError(where + ": bad number '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream iss(line);
  std::string t;
  while (iss >> t) toks.push_back(t);
  return toks;
}

inline std::string groups_decl(const StateSchema& s) {
  std::string out;
  for (std::size_t i = 0; i < s.groups.size(); ++i) {
    if (i) out += ',';
    out += s.groups[i].name;
    out += ':';
    out += kind_name(s.groups[i].kind);
    out += ':';
    out += std::to_string(s.groups[i].dim);
  }
  return out;
}

inline std::vector<ChannelGroup> parse_groups_decl(const std::string& decl, const std::string& where) {
  std::vector<ChannelGroup> groups;
  std::stringstream ss(decl);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto c1 = item.find(':');
    const auto c2 = item.rfind(':');
    if (c1 == std::string::npos || c2 == c1)
      throw ParseError(where + ": bad group declaration '" + item + "'");
    ChannelGroup g;
    g.name = item.substr(0, c1);
    const std::string ks = item.substr(c1 + 1, c2 - c1 - 1);
    const auto kind = kind_from_name(ks);
    if (!kind) throw ParseError(where + ": unknown group kind '" + ks + "'");
    g.kind = *kind;
    g.dim = std::atoi(item.substr(c2 + 1).c_str());
    groups.push_back(g);
  }
  if (groups.empty()) throw ParseError(where + ": empty group declaration");
  return groups;
}

}  // namespace detail

/// Writes one trajectory in the text format: header lines (schema, skill,
/// dt, groups) followed by one line per frame — either `MASK` or the
/// non-contact channel values in schema order, then `|` and the contact bits.
inline void save_trajectory(const Trajectory& tr, const StateSchema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "schema " << schema.name << "\n";
  out << "skill " << tr.skill << "\n";
  out << "dt " << detail::format_double(tr.dt) << "\n";
  out << "groups " << detail::groups_decl(schema) << "\n";
  const int j = schema.contact_pairs();
  for (const auto& f : tr.frames) {
    if (f.masked) {
      out << "MASK\n";
      continue;
    }
    for (int i = 0; i < f.values.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(f.values[i]);
    }
    if (j > 0) {
      out << " |";
      for (int i = 0; i < j; ++i) out << ' ' << (f.contacts[i] != 0.0 ? 1 : 0);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

inline Trajectory load_trajectory(const std::string& path, const StateSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  const std::string fname = std::filesystem::path(path).filename().string();
  auto where = [&](int line) { return fname + ":" + std::to_string(line); };

  Trajectory tr;
  std::string line;
  int lineno = 0;
  bool saw_schema = false, saw_skill = false, saw_dt = false, saw_groups = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_groups) {
      std::istringstream iss(line);
      std::string key;
      iss >> key;
      std::string rest;
      std::getline(iss, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      if (key == "schema") {
        if (rest != schema.name)
          throw ParseError(where(lineno) + ": schema name '" + rest + "' does not match manifest '" +
                           schema.name + "'");
        saw_schema = true;
      } else if (key == "skill") {
        tr.skill = rest;
        saw_skill = true;
      } else if (key == "dt") {
        tr.dt = detail::parse_double(rest, where(lineno));
        saw_dt = true;
      } else if (key == "groups") {
        const auto groups = detail::parse_groups_decl(rest, where(lineno));
        if (groups.size() != schema.groups.size())
          throw ParseError(where(lineno) + ": group declaration does not match the schema manifest");
        for (std::size_t i = 0; i < groups.size(); ++i) {
          const auto& a = groups[i];
          const auto& b = schema.groups[i];
          if (a.name != b.name || a.kind != b.kind || a.dim != b.dim)
            throw ParseError(where(lineno) + ": group declaration does not match the schema manifest");
        }
        saw_groups = true;
      } else {
        throw ParseError(where(lineno) + ": malformed header line '" + line + "'");
      }
      continue;
    }
    // frame rows
    if (line == "MASK") {
      tr.frames.push_back(Frame::masked_frame());
      continue;
    }
    Frame f = Frame::zero(schema);
    const auto toks = detail::split_ws(line);
    const int vd = schema.value_dim();
    const int j = schema.contact_pairs();
    const std::size_t want = static_cast<std::size_t>(vd) + (j > 0 ? 1 + static_cast<std::size_t>(j) : 0);
    if (toks.size() != want)
      throw ParseError(where(lineno) + ": row has " + std::to_string(toks.size()) +
                       " columns, expected " + std::to_string(want));
    for (int i = 0; i < vd; ++i)
      f.values[i] = detail::parse_double(toks[static_cast<std::size_t>(i)], where(lineno));
    if (j > 0) {
      if (toks[static_cast<std::size_t>(vd)] != "|")
        throw ParseError(where(lineno) + ": expected '|' before contact bits");
      for (int i = 0; i < j; ++i) {
        const auto& t = toks[static_cast<std::size_t>(vd) + 1 + static_cast<std::size_t>(i)];
        if (t != "0" && t != "1") throw ParseError(where(lineno) + ": contact bit must be 0 or 1");
        f.contacts[i] = (t == "1") ? 1.0 : 0.0;
      }
    }
    tr.frames.push_back(std::move(f));
  }
  if (!saw_schema || !saw_skill || !saw_dt || !saw_groups)
    throw ParseError(fname + ": incomplete header (need schema, skill, dt, groups)");
  return tr;
}

/// The dataset manifest (file named `schema` inside the dataset directory)
/// declares the groups plus lambda and epsilon per group.
inline void save_schema_manifest(const StateSchema& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "name " << s.name << "\n";
  out << "groups " << detail::groups_decl(s) << "\n";
  for (const auto& g : s.groups) {
    out << "lambda " << g.name;
    const auto& l = s.lambda_of(g.name);
    for (int i = 0; i < l.size(); ++i) out << ' ' << detail::format_double(l[i]);
    out << "\n";
  }
  for (const auto& g : s.groups)
    out << "epsilon " << g.name << ' ' << detail::format_double(s.epsilon_of(g.name)) << "\n";
}

inline StateSchema load_schema_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema manifest '" + path + "'");
  const std::string fname = std::filesystem::path(path).filename().string();
  StateSchema s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = fname + ":" + std::to_string(lineno);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "name" && toks.size() == 2) {
      s.name = toks[1];
    } else if (toks[0] == "groups" && toks.size() == 2) {
      s.groups = detail::parse_groups_decl(toks[1], where);
    } else if (toks[0] == "lambda" && toks.size() >= 3) {
      Eigen::VectorXd v(toks.size() - 2);
      for (std::size_t i = 2; i < toks.size(); ++i)
        v[static_cast<int>(i - 2)] = detail::parse_double(toks[i], where);
      s.lambda[toks[1]] = v;
    } else if (toks[0] == "epsilon" && toks.size() == 3) {
      s.epsilon[toks[1]] = detail::parse_double(toks[2], where);
    } else {
      throw ParseError(where + ": malformed manifest line '" + line + "'");
    }
  }
  if (s.groups.empty()) throw ParseError(fname + ": manifest declares no groups");
  return s;
}

/// A dataset is a directory: one `schema` manifest plus one `.traj` file per
/// trajectory. Files are read in lexicographic order for determinism.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.schema = load_schema_manifest((fs::path(dir) / "schema").string());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".traj") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Trajectory tr = load_trajectory(f, ds.schema);
    ds.skills[tr.skill].push_back(std::move(tr));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_schema_manifest(ds.schema, (fs::path(dir) / "schema").string());
  for (const auto& [skill, trajs] : ds.skills) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      char idx[16];
      std::snprintf(idx, sizeof(idx), "%03zu", i);
      save_trajectory(trajs[i], ds.schema, (fs::path(dir) / (skill + "_" + idx + ".traj")).string());
    }
  }
}

}  // namespace rlid
