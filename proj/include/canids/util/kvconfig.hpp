#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace canids {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KvEntry {
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "cli"
};

// Flat `key = value` files. `#` starts a comment, blank lines are skipped and
// `include = other.conf` splices another file (resolved relative to the
// including file) at that point. Later entries override earlier ones for
// scalar keys; consumers decide which keys may repeat.
std::vector<KvEntry> read_kv_file(const std::filesystem::path& path);
std::vector<KvEntry> parse_kv_text(const std::string& text, const std::string& origin,
                                   const std::filesystem::path& base_dir = {});

std::string trim(std::string_view s);
bool parse_bool(const std::string& value, const std::string& key);
long long parse_int(const std::string& value, const std::string& key);
double parse_double(const std::string& value, const std::string& key);
std::vector<std::string> split_list(const std::string& value, char sep = ',');

}  // namespace canids
