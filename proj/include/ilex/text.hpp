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

#ifndef ILEX_TEXT_HPP_
#define ILEX_TEXT_HPP_

#include <string>
#include <vector>

namespace ilex {

// Trim and collapse interior whitespace runs to a single space.
std::string normalize_whitespace(const std::string& s);

// ASCII lowercase; bytes >= 0x80 pass through untouched.
std::string lowercase(const std::string& s);

// Lowercase + whitespace normalization; the canonical phrase key.
std::string normalize_phrase(const std::string& s);

std::size_t count_whitespace_tokens(const std::string& s);

bool is_ascii_punct(unsigned char c);

// Shared word tokenizer for metrics and phrase extraction: lowercase,
// each ASCII punctuation byte becomes its own token, the rest splits
// on whitespace.
std::vector<std::string> word_tokenize(const std::string& s);

// True if `needle` occurs in `haystack` (both already lowercased) with
// non-alphanumeric bytes (or string edges) on both sides.
bool contains_word_bounded(const std::string& haystack,
                           const std::string& needle);

}  // namespace ilex

#endif  // ILEX_TEXT_HPP_
