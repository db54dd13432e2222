#include "seqlab/util/kv_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "seqlab/error.hpp"

namespace seqlab {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config key '" + std::string(key) + "': cannot parse '" +
                          std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!cfg.entries_.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw ValidationError("config key '" + key + "' appears twice");
    }
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

bool KeyValueConfig::contains(std::string_view key) const { return entries_.contains(key); }

const std::string& KeyValueConfig::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ValidationError("missing config key '" + std::string(key) + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(std::string_view key, const std::string& fallback) const {
  return contains(key) ? get(key) : fallback;
}

std::int64_t KeyValueConfig::get_int(std::string_view key, std::int64_t fallback) const {
  return contains(key) ? parse_number<std::int64_t>(key, get(key)) : fallback;
}

std::uint64_t KeyValueConfig::get_uint(std::string_view key, std::uint64_t fallback) const {
  return contains(key) ? parse_number<std::uint64_t>(key, get(key)) : fallback;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  return contains(key) ? parse_number<double>(key, get(key)) : fallback;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  if (!contains(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config key '" + std::string(key) + "': expected true/false, got '" + v +
                        "'");
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  entries_[key] = std::move(value);
}
void KeyValueConfig::set(const std::string& key, std::int64_t value) {
  set(key, std::to_string(value));
}
void KeyValueConfig::set(const std::string& key, std::uint64_t value) {
  set(key, std::to_string(value));
}
void KeyValueConfig::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValueConfig::set(const std::string& key, bool value) {
  set(key, std::string(value ? "true" : "false"));
}

void KeyValueConfig::require_known(std::initializer_list<std::string_view> known) const {
  for (const auto& [key, value] : entries_) {
    bool found = false;
    for (const std::string_view k : known) found = found || k == key;
    if (!found) throw ValidationError("unknown config key '" + key + "'");
  }
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + "=" + value + "\n";
  return out;
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read from '" + path.string() + "' failed");
  return ss.str();
}

}  // namespace seqlab
