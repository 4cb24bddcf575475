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

#ifndef ILEX_CORPUS_HPP_
#define ILEX_CORPUS_HPP_

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ilex/common.hpp"

namespace ilex {

struct ReviewRecord {
  std::string user_id;
  std::string item_id;
  std::string text;  // whitespace-normalized
  std::int64_t timestamp = 0;
};

// phrase (lowercase, single-spaced) -> aspect id in [0, n_aspects).
struct PhraseAspectTable {
  std::unordered_map<std::string, int> entries;
  int n_aspects = 0;

  std::optional<int> lookup(const std::string& phrase) const;
  static PhraseAspectTable load_tsv(const std::string& path);
  void save_tsv(const std::string& path) const;
};

// One fine-tuning record: target explanation plus its sampled aspect,
// sampled constraint phrases and reference texts.
struct ExplanationExample {
  std::string user_id;
  std::string item_id;
  std::string target_text;
  std::vector<std::string> user_refs;  // most recent first
  std::vector<std::string> item_refs;  // most recent first
  int aspect_id = 0;                   // pad aspect when nothing matched
  std::vector<std::string> constraints;
};

struct LoadResult {
  std::vector<ReviewRecord> records;
  std::size_t dropped_long = 0;
  std::size_t dropped_empty = 0;
};

// JSON Lines reader: one object per line with keys user, item, text and
// optional timestamp. Records longer than max_len whitespace tokens are
// dropped and counted. A malformed line raises DataError with its
// 1-based line number.
LoadResult load_corpus(const std::string& path, std::size_t max_len);

struct SplitResult {
  std::vector<ReviewRecord> train;
  std::vector<ReviewRecord> dev;
  std::vector<ReviewRecord> test;
};

// For each user with at least three reviews, exactly one review is held
// out for dev and one for test; users with fewer keep everything in
// train. Deterministic in (records, seed) and independent of record
// order within a user (per-user derived seeds).
SplitResult split_per_user(const std::vector<ReviewRecord>& records,
                           std::uint64_t seed);

const std::set<std::string>& default_stopwords();

// Maximal runs of non-stopword, non-punctuation tokens of length at most
// max_len, lowercased, deduplicated in first-occurrence order. Runs
// longer than max_len are skipped.
std::vector<std::string> extract_candidate_phrases(
    const std::string& text, const std::set<std::string>& stopwords,
    int max_len);

struct History {
  std::vector<ReviewRecord> user_reviews;  // same user, target excluded
  std::vector<ReviewRecord> item_reviews;  // same item, target excluded
};

// Samples one constraint phrase from the target text (table phrases
// first, extractor fallback) and assembles up-to-n_refs most recent
// references. The sampled phrase's aspect becomes the example aspect;
// examples without any candidate phrase get empty constraints and the
// pad aspect.
ExplanationExample build_example(const ReviewRecord& record,
                                 const PhraseAspectTable& table,
                                 const History& history, int n_refs,
                                 int pad_aspect_id, std::uint64_t seed);

}  // namespace ilex

#endif  // ILEX_CORPUS_HPP_
