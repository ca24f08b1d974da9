#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace isp::cfg {

namespace fs = std::filesystem;

// Flat key=value store with dotted keys. '#' starts a comment.
class ConfigMap {
 public:
  static ConfigMap from_file(const fs::path& path);

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& key_eq_value);  // "k=v"

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  // Throws naming the first key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  void write(const fs::path& path) const;  // frozen resolved copy

 private:
  std::map<std::string, std::string> values_;
};

bool parse_bool(const std::string& key, const std::string& v);  // on/off/true/false/1/0
double parse_double(const std::string& key, const std::string& v);
std::int64_t parse_int(const std::string& key, const std::string& v);

}  // namespace isp::cfg
