// Copyright 2026 The ilex Authors
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

#include "ilex/text.hpp"

#include <cctype>

namespace ilex {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace

std::string normalize_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string normalize_phrase(const std::string& s) {
  return lowercase(normalize_whitespace(s));
}

std::size_t count_whitespace_tokens(const std::string& s) {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

bool is_ascii_punct(unsigned char c) {
  return c < 0x80 && std::ispunct(c) != 0;
}

std::vector<std::string> word_tokenize(const std::string& s) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : s) {
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      tokens.push_back(std::string(
          1, static_cast<char>(std::tolower(static_cast<unsigned char>(c)))));
    } else {
      cur.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return tokens;
}

bool contains_word_bounded(const std::string& haystack,
                           const std::string& needle) {
  if (needle.empty()) return false;
  std::size_t from = 0;
  while (true) {
    const std::size_t pos = haystack.find(needle, from);
    if (pos == std::string::npos) return false;
    const bool left_ok =
        pos == 0 || !is_word_byte(static_cast<unsigned char>(haystack[pos - 1]));
    const std::size_t end = pos + needle.size();
    const bool right_ok =
        end == haystack.size() ||
        !is_word_byte(static_cast<unsigned char>(haystack[end]));
    if (left_ok && right_ok) return true;
    from = pos + 1;
  }
}

}  // namespace ilex
