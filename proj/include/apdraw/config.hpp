#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace apdraw {

/// Layered key-value configuration. Files use `[section]` headers with
/// `key = value` lines; keys are addressed as `section.key`. Later layers
/// (files loaded afterwards, `--set` overrides) win.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  void merge(const Config& other);
  /// Applies a single `section.key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool contains(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace apdraw
