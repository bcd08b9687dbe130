// Copyright 2026 The ctom Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small string helpers shared by the parsers. ASCII-only case handling.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctom::text {

inline bool is_space(char c) noexcept {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline char lower(char c) noexcept {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string_view trim_view(std::string_view s) noexcept {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), lower);
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) noexcept {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) { return lower(x) == lower(y); });
}

inline bool istarts_with(std::string_view s, std::string_view prefix) noexcept {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

/// Trims and collapses every whitespace run to one space.
inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : trim_view(s)) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

/// Matching key: whitespace-collapsed and case-folded.
inline std::string normalize(std::string_view s) { return to_lower(collapse_whitespace(s)); }

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    auto line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Number of sentences, where a sentence ends at `.`, `!` or `?` followed by
/// whitespace and more text. Single-letter abbreviations ("e.g.", "U.S.")
/// do not end a sentence.
inline std::size_t sentence_count(std::string_view s) {
  s = trim_view(s);
  if (s.empty()) return 0;
  std::size_t count = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    char c = s[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (!is_space(s[i + 1])) continue;
    std::size_t k = i + 1;
    while (k < s.size() && is_space(s[k])) ++k;
    if (k == s.size()) break;
    if (c == '.' && i >= 1 && std::isalpha(static_cast<unsigned char>(s[i - 1])) &&
        (i < 2 || !std::isalpha(static_cast<unsigned char>(s[i - 2])))) {
      continue;
    }
    ++count;
  }
  return count;
}

/// Drops one trailing `.`/`!`/`?` (and surrounding whitespace).
inline std::string strip_terminal_punct(std::string_view s) {
  s = trim_view(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.remove_suffix(1);
  return std::string(trim_view(s));
}

inline bool is_none_marker(std::string_view s) {
  auto t = strip_terminal_punct(s);
  return iequals(t, "none");
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

/// Whitespace-normalized, case-insensitive view of a string that remembers
/// where each normalized character came from in the original.
class NormalizedText {
 public:
  explicit NormalizedText(std::string_view original) {
    bool pending_space = false;
    for (std::size_t i = 0; i < original.size(); ++i) {
      char c = original[i];
      if (is_space(c)) {
        if (!text_.empty()) pending_space = true;
        continue;
      }
      if (pending_space) {
        text_.push_back(' ');
        origin_.push_back(i);
        pending_space = false;
      }
      text_.push_back(lower(c));
      origin_.push_back(i);
    }
  }

  const std::string& str() const noexcept { return text_; }
  /// Original index of normalized position `pos`.
  std::size_t origin(std::size_t pos) const { return origin_.at(pos); }

 private:
  std::string text_;
  std::vector<std::size_t> origin_;
};

/// Normalized needle used for leakage checks: collapsed, case-folded, and
/// without terminal punctuation so "X." also matches "x" in running text.
inline std::string leak_needle(std::string_view sentence) {
  return normalize(strip_terminal_punct(sentence));
}

}  // namespace ctom::text
