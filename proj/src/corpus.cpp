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

#include "ilex/corpus.hpp"

#include <algorithm>
#include <fstream>

#include "ilex/rng.hpp"
#include "ilex/text.hpp"
#include "json.hpp"

namespace ilex {

std::optional<int> PhraseAspectTable::lookup(const std::string& phrase) const {
  const auto it = entries.find(normalize_phrase(phrase));
  if (it == entries.end()) return std::nullopt;
  return it->second;
}

PhraseAspectTable PhraseAspectTable::load_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read phrase table: " + path);
  PhraseAspectTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("phrase table line " + std::to_string(lineno) +
                      ": expected phrase<TAB>aspect_id");
    }
    const std::string phrase = normalize_phrase(line.substr(0, tab));
    if (phrase.empty()) {
      throw DataError("phrase table line " + std::to_string(lineno) +
                      ": empty phrase");
    }
    int aspect = 0;
    try {
      aspect = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError("phrase table line " + std::to_string(lineno) +
                      ": bad aspect id");
    }
    if (aspect < 0) {
      throw DataError("phrase table line " + std::to_string(lineno) +
                      ": negative aspect id");
    }
    table.entries[phrase] = aspect;
    table.n_aspects = std::max(table.n_aspects, aspect + 1);
  }
  return table;
}

void PhraseAspectTable::save_tsv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write phrase table: " + path);
  std::vector<std::pair<std::string, int>> rows(entries.begin(), entries.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [phrase, aspect] : rows) {
    out << phrase << '\t' << aspect << '\n';
  }
}

LoadResult load_corpus(const std::string& path, std::size_t max_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus: " + path);
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) +
                      ": invalid JSON: " + e.what());
    }
    ReviewRecord rec;
    try {
      rec.user_id = j.at("user").get<std::string>();
      rec.item_id = j.at("item").get<std::string>();
      rec.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) +
                      ": missing or mistyped key: " + e.what());
    }
    if (rec.user_id.empty() || rec.item_id.empty()) {
      throw DataError("corpus line " + std::to_string(lineno) +
                      ": empty user or item id");
    }
    if (j.contains("timestamp")) {
      if (!j["timestamp"].is_number_integer()) {
        throw DataError("corpus line " + std::to_string(lineno) +
                        ": timestamp must be an integer");
      }
      rec.timestamp = j["timestamp"].get<std::int64_t>();
    }
    rec.text = normalize_whitespace(rec.text);
    if (rec.text.empty()) {
      ++result.dropped_empty;
      continue;
    }
    if (count_whitespace_tokens(rec.text) > max_len) {
      ++result.dropped_long;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

SplitResult split_per_user(const std::vector<ReviewRecord>& records,
                           std::uint64_t seed) {
  // Group record indices by user, keeping first-occurrence order.
  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  std::vector<std::string> user_order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = by_user.try_emplace(records[i].user_id);
    if (inserted) user_order.push_back(records[i].user_id);
    it->second.push_back(i);
  }

  enum class Dest { kTrain, kDev, kTest };
  std::vector<Dest> dest(records.size(), Dest::kTrain);
  for (const auto& user : user_order) {
    const auto& idx = by_user[user];
    if (idx.size() < 3) continue;
    Rng rng(mix_seed(seed, fnv1a64(user)));
    const std::size_t dev_pos = static_cast<std::size_t>(rng.below(idx.size()));
    std::size_t test_pos =
        static_cast<std::size_t>(rng.below(idx.size() - 1));
    if (test_pos >= dev_pos) ++test_pos;
    dest[idx[dev_pos]] = Dest::kDev;
    dest[idx[test_pos]] = Dest::kTest;
  }

  SplitResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (dest[i]) {
      case Dest::kTrain: out.train.push_back(records[i]); break;
      case Dest::kDev: out.dev.push_back(records[i]); break;
      case Dest::kTest: out.test.push_back(records[i]); break;
    }
  }
  return out;
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> kStopwords = {
      "a",    "an",   "and",  "are",   "as",    "at",    "be",   "but",
      "by",   "for",  "from", "had",   "has",   "have",  "he",   "her",
      "his",  "i",    "if",   "in",    "is",    "it",    "its",  "love",
      "me",   "my",   "not",  "of",    "on",    "or",    "our",  "she",
      "so",   "that", "the",  "their", "there", "these", "they", "this",
      "to",   "was",  "we",   "were",  "with",  "would", "you",  "your",
      "also", "very", "just", "really"};
  return kStopwords;
}

std::vector<std::string> extract_candidate_phrases(
    const std::string& text, const std::set<std::string>& stopwords,
    int max_len) {
  const std::vector<std::string> tokens = word_tokenize(text);
  std::vector<std::string> phrases;
  std::set<std::string> seen;
  std::vector<std::string> run;
  auto flush = [&] {
    if (!run.empty() && static_cast<int>(run.size()) <= max_len) {
      std::string phrase;
      for (std::size_t i = 0; i < run.size(); ++i) {
        if (i > 0) phrase += ' ';
        phrase += run[i];
      }
      if (seen.insert(phrase).second) phrases.push_back(phrase);
    }
    run.clear();
  };
  for (const auto& tok : tokens) {
    const bool breaker = (tok.size() == 1 && is_ascii_punct(
                              static_cast<unsigned char>(tok[0]))) ||
                         stopwords.count(tok) > 0;
    if (breaker) {
      flush();
    } else {
      run.push_back(tok);
    }
  }
  flush();
  return phrases;
}

namespace {

// Up to n_refs most recent texts, most recent first. Ordering key is
// (timestamp, position); later position wins ties so untimestamped data
// degrades to "latest in file order".
std::vector<std::string> recent_texts(const std::vector<ReviewRecord>& reviews,
                                      int n_refs) {
  std::vector<std::size_t> order(reviews.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (reviews[a].timestamp != reviews[b].timestamp) {
                       return reviews[a].timestamp > reviews[b].timestamp;
                     }
                     return a > b;
                   });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < order.size() && static_cast<int>(out.size()) < n_refs;
       ++i) {
    out.push_back(reviews[order[i]].text);
  }
  return out;
}

}  // namespace

ExplanationExample build_example(const ReviewRecord& record,
                                 const PhraseAspectTable& table,
                                 const History& history, int n_refs,
                                 int pad_aspect_id, std::uint64_t seed) {
  ExplanationExample ex;
  ex.user_id = record.user_id;
  ex.item_id = record.item_id;
  ex.target_text = record.text;
  ex.user_refs = recent_texts(history.user_reviews, n_refs);
  ex.item_refs = recent_texts(history.item_reviews, n_refs);
  ex.aspect_id = pad_aspect_id;

  const std::string lower_text = lowercase(record.text);

  // Candidates from the table: phrases present as word-bounded substrings.
  std::vector<std::pair<std::string, int>> candidates;
  {
    std::vector<std::pair<std::string, int>> rows(table.entries.begin(),
                                                  table.entries.end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [phrase, aspect] : rows) {
      if (contains_word_bounded(lower_text, phrase)) {
        candidates.emplace_back(phrase, aspect);
      }
    }
  }

  Rng rng(mix_seed(seed, fnv1a64(record.user_id + "\x1f" + record.item_id +
                                 "\x1f" + record.text)));
  if (!candidates.empty()) {
    const auto& [phrase, aspect] =
        candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
    ex.constraints = {phrase};
    ex.aspect_id = aspect;
    return ex;
  }

  const std::vector<std::string> extracted =
      extract_candidate_phrases(record.text, default_stopwords(), 4);
  if (!extracted.empty()) {
    ex.constraints = {
        extracted[static_cast<std::size_t>(rng.below(extracted.size()))]};
  }
  return ex;
}

}  // namespace ilex
