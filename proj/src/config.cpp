#include "isp/config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace isp::cfg {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap ConfigMap::from_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file: " + path.string());
  ConfigMap cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               " is not key=value: " + line);
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::runtime_error("empty config key");
  values_[key] = value;
}

void ConfigMap::apply_override(const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override is not key=value: " + kv);
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

bool ConfigMap::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& ConfigMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::runtime_error("missing config key: " + key);
  return it->second;
}

std::string ConfigMap::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

void ConfigMap::require_known(const std::vector<std::string>& known) const {
  for (const auto& [k, _] : values_) {
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::runtime_error("unknown config key: " + k);
  }
}

void ConfigMap::write(const fs::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config: " + path.string());
  for (const auto& [k, v] : values_) f << k << '=' << v << '\n';
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::runtime_error("config key " + key + ": expected on/off, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::runtime_error("config key " + key + ": expected number, got '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return i;
  } catch (...) {
    throw std::runtime_error("config key " + key + ": expected integer, got '" + v + "'");
  }
}

}  // namespace isp::cfg
