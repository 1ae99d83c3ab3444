#pragma once

#include <cctype>
#include <string>
#include <vector>

#include <json.hpp>

#include "kstonet/common.hpp"

namespace kstonet {

// Minimal TOML reader covering the configuration subset: [table] headers
// (dotted allowed), key = value pairs with bare or quoted keys, strings,
// integers, floats, booleans, and flat arrays. Comments start with '#'.
namespace toml {

namespace detail {

inline void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

inline std::string parse_error(long line, const std::string& what) {
  return "toml line " + std::to_string(line) + ": " + what;
}

inline nlohmann::json parse_value(const std::string& s, std::size_t& i, long line);

inline std::string parse_basic_string(const std::string& s, std::size_t& i, long line) {
  std::string out;
  ++i;  // opening quote
  while (i < s.size() && s[i] != '"') {
    if (s[i] == '\\' && i + 1 < s.size()) {
      ++i;
      switch (s[i]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default:
          throw ConfigError("config", parse_error(line, "unsupported escape"));
      }
      ++i;
    } else {
      out += s[i++];
    }
  }
  if (i >= s.size()) throw ConfigError("config", parse_error(line, "unterminated string"));
  ++i;  // closing quote
  return out;
}

inline nlohmann::json parse_scalar(const std::string& token, long line) {
  if (token == "true") return true;
  if (token == "false") return false;
  // Integer first so that whole numbers keep their type.
  {
    std::size_t pos = 0;
    bool ok = !token.empty();
    std::size_t k = (token[0] == '+' || token[0] == '-') ? 1 : 0;
    if (k == token.size()) ok = false;
    for (; ok && k < token.size(); ++k)
      if (!std::isdigit(static_cast<unsigned char>(token[k]))) ok = false;
    if (ok) return std::stoll(token, &pos);
  }
  try {
    std::size_t pos = 0;
    double v = std::stod(token, &pos);
    if (pos == token.size()) return v;
  } catch (...) {
  }
  throw ConfigError("config", parse_error(line, "cannot parse value '" + token + "'"));
}

inline nlohmann::json parse_value(const std::string& s, std::size_t& i, long line) {
  skip_ws(s, i);
  if (i >= s.size()) throw ConfigError("config", parse_error(line, "missing value"));
  if (s[i] == '"') return parse_basic_string(s, i, line);
  if (s[i] == '[') {
    nlohmann::json arr = nlohmann::json::array();
    ++i;
    skip_ws(s, i);
    if (i < s.size() && s[i] == ']') {
      ++i;
      return arr;
    }
    for (;;) {
      arr.push_back(parse_value(s, i, line));
      skip_ws(s, i);
      if (i < s.size() && s[i] == ',') {
        ++i;
        continue;
      }
      if (i < s.size() && s[i] == ']') {
        ++i;
        return arr;
      }
      throw ConfigError("config", parse_error(line, "expected ',' or ']' in array"));
    }
  }
  std::size_t start = i;
  while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != '#' && s[i] != ' ' &&
         s[i] != '\t')
    ++i;
  return parse_scalar(s.substr(start, i - start), line);
}

inline std::vector<std::string> parse_key_path(const std::string& s, std::size_t& i, long line) {
  std::vector<std::string> path;
  for (;;) {
    skip_ws(s, i);
    if (i >= s.size()) throw ConfigError("config", parse_error(line, "missing key"));
    std::string part;
    if (s[i] == '"') {
      part = parse_basic_string(s, i, line);
    } else {
      std::size_t start = i;
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' ||
                              s[i] == '-'))
        ++i;
      part = s.substr(start, i - start);
      if (part.empty()) throw ConfigError("config", parse_error(line, "empty key"));
    }
    path.push_back(std::move(part));
    skip_ws(s, i);
    if (i < s.size() && s[i] == '.') {
      ++i;
      continue;
    }
    return path;
  }
}

}  // namespace detail

inline nlohmann::json parse(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::size_t pos = 0;
  long line_no = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::size_t i = 0;
    detail::skip_ws(line, i);
    if (i >= line.size() || line[i] == '#') {
      if (pos > text.size()) break;
      continue;
    }
    if (line[i] == '[') {
      ++i;
      auto path = detail::parse_key_path(line, i, line_no);
      detail::skip_ws(line, i);
      if (i >= line.size() || line[i] != ']')
        throw ConfigError("config", detail::parse_error(line_no, "expected ']'"));
      table = &root;
      for (const auto& part : path) table = &(*table)[part];
      if (!table->is_object() && !table->is_null())
        throw ConfigError("config", detail::parse_error(line_no, "table redefines a value"));
      continue;
    }
    auto path = detail::parse_key_path(line, i, line_no);
    detail::skip_ws(line, i);
    if (i >= line.size() || line[i] != '=')
      throw ConfigError("config", detail::parse_error(line_no, "expected '='"));
    ++i;
    nlohmann::json value = detail::parse_value(line, i, line_no);
    detail::skip_ws(line, i);
    if (i < line.size() && line[i] != '#')
      throw ConfigError("config", detail::parse_error(line_no, "trailing characters"));
    nlohmann::json* slot = table;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) slot = &(*slot)[path[k]];
    if (slot->contains(path.back()))
      throw ConfigError("config", detail::parse_error(line_no, "duplicate key '" + path.back() + "'"));
    (*slot)[path.back()] = std::move(value);
    if (pos > text.size()) break;
  }
  return root;
}

}  // namespace toml
}  // namespace kstonet
