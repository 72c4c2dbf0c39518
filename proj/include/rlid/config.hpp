#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlid/io.hpp"

namespace rlid {

inline constexpr const char* kVersion = "0.1.0";

/// Flat `key value` text configuration. Every lookup records the resolved
/// value (explicit or default), so the manifest always lists the full
/// effective configuration of a run.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream iss(line);
      std::string key;
      if (!(iss >> key)) continue;
      std::string value, tok;
      while (iss >> tok) {
        if (!value.empty()) value += ' ';
        value += tok;
      }
      if (value.empty())
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": key '" + key +
                                 "' has no value");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  double get_double(const std::string& key, double def) {
    auto it = values_.find(key);
    const double v = it == values_.end() ? def : detail::parse_double(it->second, "config key " + key);
    resolved_[key] = detail::format_double(v);
    return v;
  }

  int get_int(const std::string& key, int def) {
    auto it = values_.find(key);
    int v = def;
    if (it != values_.end()) {
      try {
        v = std::stoi(it->second);
      } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": bad integer '" + it->second + "'");
      }
    }
    resolved_[key] = std::to_string(v);
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
    auto it = values_.find(key);
    std::uint64_t v = def;
    if (it != values_.end()) v = std::stoull(it->second);
    resolved_[key] = std::to_string(v);
    return v;
  }

  bool get_bool(const std::string& key, bool def) {
    auto it = values_.find(key);
    bool v = def;
    if (it != values_.end()) {
      if (it->second == "true" || it->second == "1") v = true;
      else if (it->second == "false" || it->second == "0") v = false;
      else throw std::runtime_error("config key " + key + ": bad bool '" + it->second + "'");
    }
    resolved_[key] = v ? "true" : "false";
    return v;
  }

  std::string get_string(const std::string& key, const std::string& def) {
    auto it = values_.find(key);
    const std::string v = it == values_.end() ? def : it->second;
    resolved_[key] = v;
    return v;
  }

  /// Keys present in the file but never consumed (likely typos).
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!resolved_.count(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

/// Sorted key=value manifest; identical manifests must mean identical runs,
/// so nothing time- or host-dependent belongs here.
inline void write_manifest(const std::map<std::string, std::string>& entries, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open manifest '" + path + "' for writing");
  out << "version " << kVersion << "\n";
  for (const auto& [k, v] : entries) out << k << ' ' << v << "\n";
  if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

}  // namespace rlid
