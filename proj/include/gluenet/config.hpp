#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "gluenet/error.hpp"

namespace gluenet {

// ---------------------------------------------------------------------------
// key = value text

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

/// Parses "key = value" lines; '#' starts a comment. Duplicate keys are an
/// error.
inline KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    require(eq != std::string::npos, ErrorKind::kConfig,
            "line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    require(!key.empty(), ErrorKind::kConfig,
            "line " + std::to_string(lineno) + ": empty key");
    require(kv.emplace(key, value).second, ErrorKind::kConfig,
            "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::kConfig,
          "'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size() && std::isfinite(out),
          ErrorKind::kConfig, "'" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::kConfig, "'" + key + "' expects true/false, got '" + v + "'");
}

// ---------------------------------------------------------------------------
// GlueNetConfig

/// Head repetitions: 1 when token lengths agree, otherwise 2 for length
/// ratios up to 2 and 3 beyond.
inline std::size_t default_head_repeats(std::size_t token_in, std::size_t token_out) {
  if (token_in == token_out) return 1;
  const auto hi = std::max(token_in, token_out);
  const auto lo = std::min(token_in, token_out);
  return hi <= 2 * lo ? 2 : 3;
}

struct GlueNetConfig {
  std::size_t token_in = 77;
  std::size_t token_out = 77;
  std::size_t dim_in = 1024;
  std::size_t dim_out = 1024;
  std::size_t num_rms = 5;
  std::size_t head_repeats = 1;
  double token_hidden_ratio = 2.0;
  double dim_hidden_ratio = 4.0;
  bool tail_layer_norm = false;

  static GlueNetConfig make(std::size_t token_in, std::size_t token_out,
                            std::size_t dim_in, std::size_t dim_out,
                            std::size_t num_rms) {
    GlueNetConfig c;
    c.token_in = token_in;
    c.token_out = token_out;
    c.dim_in = dim_in;
    c.dim_out = dim_out;
    c.num_rms = num_rms;
    c.head_repeats = default_head_repeats(token_in, token_out);
    return c;
  }

  /// Hidden width of the token-axis MLPs.
  std::size_t token_hidden() const { return hidden_width(token_hidden_ratio, token_out); }
  /// Hidden width of the channel-axis MLPs.
  std::size_t dim_hidden() const { return hidden_width(dim_hidden_ratio, dim_out); }

  void validate() const {
    require(token_in >= 1 && token_out >= 1 && dim_in >= 1 && dim_out >= 1,
            ErrorKind::kConfig, "all extents must be >= 1");
    require(num_rms >= 1, ErrorKind::kConfig, "num_rms must be >= 1");
    require(token_hidden_ratio >= 1.0 && dim_hidden_ratio >= 1.0, ErrorKind::kConfig,
            "hidden ratios must be >= 1");
    if (token_in == token_out) {
      require(head_repeats == 1, ErrorKind::kConfig,
              "head_repeats must be 1 when token_in == token_out");
    } else {
      require(head_repeats >= 2, ErrorKind::kConfig,
              "head_repeats must be >= 2 when token lengths differ");
    }
  }

  /// Configuration of the symmetric decoder.
  GlueNetConfig mirror() const {
    GlueNetConfig m = *this;
    std::swap(m.token_in, m.token_out);
    std::swap(m.dim_in, m.dim_out);
    return m;
  }

  /// Canonical text form; digests are computed over this string.
  std::string to_text() const {
    std::ostringstream os;
    os << "token_in = " << token_in << '\n'
       << "token_out = " << token_out << '\n'
       << "dim_in = " << dim_in << '\n'
       << "dim_out = " << dim_out << '\n'
       << "num_rms = " << num_rms << '\n'
       << "head_repeats = " << head_repeats << '\n'
       << "token_hidden_ratio = " << format_double(token_hidden_ratio) << '\n'
       << "dim_hidden_ratio = " << format_double(dim_hidden_ratio) << '\n'
       << "tail_layer_norm = " << (tail_layer_norm ? "true" : "false") << '\n';
    return os.str();
  }

  /// Reads the keys above; missing keys keep their defaults except
  /// head_repeats, which is derived from the token lengths when absent.
  static GlueNetConfig from_key_values(const KeyValues& kv, std::string_view prefix = "") {
    GlueNetConfig c;
    bool has_repeats = false;
    for (const auto& [full_key, value] : kv) {
      if (!full_key.starts_with(prefix)) continue;
      const std::string key = full_key.substr(prefix.size());
      if (key == "token_in") c.token_in = parse_uint(key, value);
      else if (key == "token_out") c.token_out = parse_uint(key, value);
      else if (key == "dim_in") c.dim_in = parse_uint(key, value);
      else if (key == "dim_out") c.dim_out = parse_uint(key, value);
      else if (key == "num_rms") c.num_rms = parse_uint(key, value);
      else if (key == "head_repeats") {
        c.head_repeats = parse_uint(key, value);
        has_repeats = true;
      } else if (key == "token_hidden_ratio") c.token_hidden_ratio = parse_double(key, value);
      else if (key == "dim_hidden_ratio") c.dim_hidden_ratio = parse_double(key, value);
      else if (key == "tail_layer_norm") c.tail_layer_norm = parse_bool(key, value);
      else if (prefix.empty()) fail(ErrorKind::kConfig, "unknown config key '" + key + "'");
    }
    if (!has_repeats) c.head_repeats = default_head_repeats(c.token_in, c.token_out);
    c.validate();
    return c;
  }

  static GlueNetConfig parse(std::string_view text) {
    return from_key_values(parse_key_values(text));
  }

  static GlueNetConfig load(const std::string& path) {
    return parse(read_text_file(path));
  }

  friend bool operator==(const GlueNetConfig&, const GlueNetConfig&) = default;

 private:
  static std::size_t hidden_width(double ratio, std::size_t extent) {
    const auto w = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(extent)));
    return std::max<std::size_t>(w, 1);
  }
};

}  // namespace gluenet
