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

// Sentence-level Rouge-L over word tokens.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "ctom/errors.hpp"
#include "ctom/text.hpp"

namespace ctom {

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Lowercases, drops ASCII punctuation and splits on whitespace.
inline std::vector<std::string> rouge_tokenize(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    if (std::ispunct(static_cast<unsigned char>(c))) continue;
    cleaned.push_back(text::lower(c));
  }
  return text::split_whitespace(cleaned);
}

/// Length of the longest common subsequence, O(|a|*|b|) time, O(|b|) space.
/// Sentence-length inputs use a stack buffer instead of the heap.
template <class T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  constexpr std::size_t kStackRow = 128;
  std::array<std::size_t, kStackRow> stack_row;
  std::vector<std::size_t> heap_row;
  std::size_t* row;
  if (b.size() < kStackRow) {
    row = stack_row.data();
  } else {
    heap_row.resize(b.size() + 1);
    row = heap_row.data();
  }
  std::fill(row, row + b.size() + 1, std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

template <class T>
RougeL rouge_l(const std::vector<T>& candidate, const std::vector<T>& reference) {
  if (reference.empty()) throw EmptyReference("Rouge-L reference is empty");
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  RougeL r;
  r.precision = candidate.empty() ? 0.0 : lcs / static_cast<double>(candidate.size());
  r.recall = lcs / static_cast<double>(reference.size());
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline RougeL rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(rouge_tokenize(candidate), rouge_tokenize(reference));
}

}  // namespace ctom
