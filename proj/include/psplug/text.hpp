#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace psplug {

inline bool is_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Maximal runs of [A-Za-z0-9_], lowercased, in order. Duplicates preserved.
inline std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>((c >= 'A' && c <= 'Z') ? c - 'A' + 'a' : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Collapses runs of whitespace to single spaces and trims the ends; used to
// detect pairs whose two sides differ only in spacing.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool in_space = true;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(static_cast<char>(c));
      in_space = false;
    }
  }
  return out;
}

inline std::string replace_all(std::string text, std::string_view needle, std::string_view repl) {
  if (needle.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), repl);
    pos += repl.size();
  }
  return text;
}

// Folds common typographic UTF-8 punctuation to printable ASCII and drops any
// remaining bytes outside 32..126 (newlines/tabs become spaces). Bridges
// arbitrary prompt text to tokenizers that only accept printable ASCII.
inline std::string ascii_fold(std::string_view text) {
  std::string s(text);
  s = replace_all(std::move(s), "’", "'");
  s = replace_all(std::move(s), "‘", "'");
  s = replace_all(std::move(s), "“", "\"");
  s = replace_all(std::move(s), "”", "\"");
  s = replace_all(std::move(s), "—", "-");
  s = replace_all(std::move(s), "–", "-");
  s = replace_all(std::move(s), "…", "...");
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (c == '\n' || c == '\t' || c == '\r') {
      out.push_back(' ');
    } else if (c >= 32 && c <= 126) {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

}  // namespace psplug
