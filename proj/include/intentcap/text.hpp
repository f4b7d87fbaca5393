#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace intentcap {

// Caption tokenization: lowercase, ASCII punctuation mapped to spaces, split
// on whitespace. Bytes outside ASCII pass through unchanged so UTF-8 words
// survive. Deterministic by construction; no locale involvement.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 128) {
      cur.push_back(static_cast<char>(c));
    } else if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

struct TokenizedCaption {
  std::string source;
  std::vector<std::string> tokens;

  static TokenizedCaption make(std::string_view text) {
    return {std::string(text), tokenize(text)};
  }
};

// Lowercases ASCII letters and collapses whitespace runs to single spaces,
// trimming the ends; used by the character n-gram similarity.
inline std::string normalize_spacing(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
      if (!out.empty()) pending_space = true;
    } else {
      if (pending_space) {
        out.push_back(' ');
        pending_space = false;
      }
      out.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
  }
  return out;
}

}  // namespace intentcap
