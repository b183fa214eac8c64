#include "canids/util/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace canids {
namespace {

constexpr int kMaxIncludeDepth = 16;

std::vector<KvEntry> parse_impl(const std::string& text, const std::string& origin,
                                const std::filesystem::path& base_dir, int depth) {
  if (depth > kMaxIncludeDepth) throw ConfigError(origin + ": include nesting too deep");
  std::vector<KvEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (key == "include") {
      std::filesystem::path inc = value;
      if (inc.is_relative()) inc = base_dir / inc;
      std::ifstream f(inc);
      if (!f) throw ConfigError(where + ": cannot open include " + inc.string());
      std::stringstream ss;
      ss << f.rdbuf();
      auto nested = parse_impl(ss.str(), inc.string(), inc.parent_path(), depth + 1);
      out.insert(out.end(), nested.begin(), nested.end());
      continue;
    }
    out.push_back({std::move(key), std::move(value), where});
  }
  return out;
}

}  // namespace

std::vector<KvEntry> parse_kv_text(const std::string& text, const std::string& origin,
                                   const std::filesystem::path& base_dir) {
  return parse_impl(text, origin, base_dir, 0);
}

std::vector<KvEntry> read_kv_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_impl(ss.str(), path.string(), path.parent_path(), 0);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(key + ": expected boolean, got '" + value + "'");
}

long long parse_int(const std::string& value, const std::string& key) {
  long long out = 0;
  int base = 10;
  std::string_view digits = value;
  if (digits.starts_with("0x") || digits.starts_with("0X")) {
    base = 16;
    digits.remove_prefix(2);
  }
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), out, base);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty())
    throw ConfigError(key + ": expected integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& value, const std::string& key) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw ConfigError(key + ": expected number, got '" + value + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& value, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(value);
  while (std::getline(in, cur, sep)) {
    std::string t = trim(cur);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace canids
