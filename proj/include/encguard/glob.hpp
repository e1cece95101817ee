// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace encguard {

/// Path glob with two wildcards: `*` matches any run of characters inside a
/// single path segment, `**` matches any run including `/`. A trailing `/**`
/// also matches the directory itself. No character classes, no `?`.
/// Matching is case-sensitive.
inline bool glob_match(std::string_view pattern, std::string_view path) {
  // Classic backtracking matcher with two resume points: one for the most
  // recent `*` (cannot cross '/') and one for the most recent `**`.
  if (pattern.size() >= 3 && pattern.substr(pattern.size() - 3) == "/**") {
    if (glob_match(pattern.substr(0, pattern.size() - 3), path)) return true;
  }

  size_t p = 0, s = 0;
  size_t star_p = std::string_view::npos, star_s = 0;
  size_t dstar_p = std::string_view::npos, dstar_s = 0;
  while (s < path.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      if (p + 1 < pattern.size() && pattern[p + 1] == '*') {
        dstar_p = p + 2;
        dstar_s = s;
        star_p = std::string_view::npos;
        p += 2;
      } else {
        star_p = p + 1;
        star_s = s;
        p += 1;
      }
      continue;
    }
    if (p < pattern.size() && pattern[p] == path[s]) {
      ++p;
      ++s;
      continue;
    }
    if (star_p != std::string_view::npos && path[star_s] != '/') {
      p = star_p;
      s = ++star_s;
      continue;
    }
    if (dstar_p != std::string_view::npos) {
      p = dstar_p;
      s = ++dstar_s;
      star_p = std::string_view::npos;
      continue;
    }
    return false;
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

}  // namespace encguard
