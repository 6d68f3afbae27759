#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace convqa::text {

// Offsets in dataset files count Unicode code points (the QuAC convention);
// std::string works in bytes. These helpers translate between the two for
// well-formed UTF-8.

inline bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

inline std::size_t codepoint_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if (!is_continuation(c)) ++n;
  }
  return n;
}

// Byte offset of code point `cp`; nullopt when cp > codepoint_length(s).
inline std::optional<std::size_t> byte_offset(std::string_view s, std::size_t cp) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (is_continuation(static_cast<unsigned char>(s[i]))) continue;
    if (seen == cp) return i;
    ++seen;
  }
  if (seen == cp) return s.size();
  return std::nullopt;
}

inline std::size_t codepoint_offset(std::string_view s, std::size_t byte) {
  return codepoint_length(s.substr(0, std::min(byte, s.size())));
}

// Slice by code point range [begin, end); nullopt when out of range.
inline std::optional<std::string> cp_slice(std::string_view s, std::size_t begin, std::size_t end) {
  if (begin > end) return std::nullopt;
  auto b = byte_offset(s, begin);
  auto e = byte_offset(s, end);
  if (!b || !e) return std::nullopt;
  return std::string(s.substr(*b, *e - *b));
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Collapse whitespace runs to one space and trim both ends.
inline std::string squash_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
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

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace convqa::text
