#include "isolab/kvconfig.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <string_view>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"

namespace isolab {

namespace {

std::string trimmed(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::uint64_t parse_u64(const std::string& key, std::string_view token) {
  const std::string t = trimmed(token);
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw FormatError("config key '" + key + "': not an unsigned integer: '" + t + "'");
  }
  return v;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = s.find(',');
    std::string item = trimmed(s.substr(0, comma));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const std::string body = trimmed(view);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trimmed(std::string_view(body).substr(0, eq));
    std::string value = trimmed(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    cfg.entries_[key] = std::move(value);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in);
}

bool KeyValueConfig::contains(const std::string& key) const { return entries_.count(key) != 0; }

void KeyValueConfig::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

std::optional<std::string> KeyValueConfig::get_string(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::optional<double> KeyValueConfig::get_double(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  try {
    return parse_double(*s);
  } catch (const FormatError& e) {
    throw FormatError("config key '" + key + "': " + e.what());
  }
}

std::optional<std::uint64_t> KeyValueConfig::get_u64(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  return parse_u64(key, *s);
}

std::optional<std::vector<double>> KeyValueConfig::get_double_list(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  std::vector<double> out;
  for (const auto& item : split_list(*s)) {
    try {
      out.push_back(parse_double(item));
    } catch (const FormatError& e) {
      throw FormatError("config key '" + key + "': " + e.what());
    }
  }
  return out;
}

std::optional<std::vector<std::uint64_t>> KeyValueConfig::get_u64_list(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(*s)) out.push_back(parse_u64(key, item));
  return out;
}

std::optional<std::vector<std::string>> KeyValueConfig::get_string_list(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  return split_list(*s);
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (used_.count(k) == 0) out.push_back(k);
  }
  return out;
}

}  // namespace isolab
