#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ssc {

/// Flat `key=value` configuration. Blank lines and `#` comments are ignored.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  /// `key=value` assignment from a command line override.
  void set_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// Values in `other` win.
  void merge(const KeyValues& other);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;

  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const;

  /// Throws naming the first key not in `known`.
  void reject_unknown(const std::set<std::string>& known, const std::string& context) const;

  std::string to_text() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);
/// Comma- or x-separated list of non-negative integers ("2,2,2" or "32x16x32").
std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& what);
std::string join_sizes(const std::vector<std::size_t>& v, char sep = ',');

}  // namespace ssc
