#pragma once

// Plain-text key=value records and little-endian float32 arrays. Every file
// format in the toolkit is built from these two primitives.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "echomap/common.hpp"

namespace echomap {

/// Ordered key=value record. Keys may repeat (manifest sample lines); `get`
/// requires uniqueness, `get_all` does not.
class KeyValueRecord {
 public:
  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void append(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
  }

  bool contains(std::string_view key) const {
    for (const auto& e : entries_) {
      if (e.first == key) return true;
    }
    return false;
  }

  const std::string& get(std::string_view key) const {
    const std::string* found = nullptr;
    for (const auto& e : entries_) {
      if (e.first == key) {
        if (found) throw Error("duplicate key '" + std::string(key) + "'");
        found = &e.second;
      }
    }
    if (!found) throw Error("missing key '" + std::string(key) + "'");
    return *found;
  }

  std::vector<std::string> get_all(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (e.first == key) out.push_back(e.second);
    }
    return out;
  }

  double get_double(std::string_view key) const { return parse_double(get(key), key); }
  long long get_int(std::string_view key) const { return parse_int(get(key), key); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

  static KeyValueRecord parse(std::string_view text) {
    KeyValueRecord rec;
    std::size_t line_no = 0;
    while (!text.empty()) {
      ++line_no;
      auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      line = trim(line);
      if (line.empty() || line.front() == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw Error("line " + std::to_string(line_no) + ": expected key=value, got '" +
                    std::string(line) + "'");
      }
      auto key = trim(line.substr(0, eq));
      if (key.empty()) throw Error("line " + std::to_string(line_no) + ": empty key");
      rec.append(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return rec;
  }

  static double parse_double(std::string_view s, std::string_view what) {
    std::string tmp(trim(s));
    if (tmp == "inf" || tmp == "+inf") return INFINITY;
    if (tmp == "-inf") return -INFINITY;
    char* end = nullptr;
    double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size()) {
      throw Error("bad number for '" + std::string(what) + "': '" + tmp + "'");
    }
    return v;
  }

  static long long parse_int(std::string_view s, std::string_view what) {
    s = trim(s);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error("bad integer for '" + std::string(what) + "': '" + std::string(s) + "'");
    }
    return v;
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
      s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
      s.remove_suffix(1);
    }
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal text that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("format_double failed");
  return std::string(buf, ptr);
}

inline std::string join_doubles(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += format_double(values[i]);
  }
  return out;
}

inline std::vector<double> split_doubles(std::string_view s, std::string_view what) {
  std::vector<double> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(KeyValueRecord::parse_double(tok, what));
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Writes through a sibling temporary and renames, so readers never observe a
/// partially written file.
inline void write_text_file_atomic(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, text);
  std::filesystem::rename(tmp, path);
}

namespace detail {
inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  } else {
    return v;
  }
}
}  // namespace detail

/// Little-endian float32, row-major.
template <typename T>
void write_f32(const std::filesystem::path& path, std::span<const T> values) {
  std::vector<std::uint32_t> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw[i] = detail::to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Reads exactly `count` floats; a short or oversized file is an error naming
/// the file.
inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t count) {
  std::error_code ec;
  auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error("cannot stat '" + path.string() + "': " + ec.message());
  if (size != count * sizeof(float)) {
    throw Error("'" + path.string() + "' has " + std::to_string(size) + " bytes, expected " +
                std::to_string(count * sizeof(float)));
  }
  std::vector<std::uint32_t> raw(count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error("short read on '" + path.string() + "'");
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(detail::to_little(raw[i]));
  return out;
}

}  // namespace echomap
