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

#include "ilex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "ilex/text.hpp"

namespace ilex {

namespace {

std::vector<std::string> ngrams(const std::vector<std::string>& toks, int n) {
  std::vector<std::string> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    std::string g = toks[i];
    for (int j = 1; j < n; ++j) {
      g += '\x1f';
      g += toks[i + static_cast<std::size_t>(j)];
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

double bleu_n(const std::vector<EvalPair>& pairs, int n) {
  if (pairs.empty()) throw DataError("empty evaluation corpus");
  if (n < 1 || n > 2) throw UsageError("bleu order must be 1 or 2");

  long long hyp_len = 0, ref_len = 0;
  std::vector<double> log_precisions;
  for (int order = 1; order <= n; ++order) {
    long long matched = 0, total = 0;
    for (const auto& pair : pairs) {
      const auto hyp = word_tokenize(pair.hypothesis);
      const auto ref = word_tokenize(pair.reference);
      if (order == 1) {
        hyp_len += static_cast<long long>(hyp.size());
        ref_len += static_cast<long long>(ref.size());
      }
      std::unordered_map<std::string, int> ref_counts;
      for (const auto& g : ngrams(ref, order)) ++ref_counts[g];
      std::unordered_map<std::string, int> hyp_counts;
      for (const auto& g : ngrams(hyp, order)) ++hyp_counts[g];
      for (const auto& [g, c] : hyp_counts) {
        total += c;
        const auto it = ref_counts.find(g);
        if (it != ref_counts.end()) matched += std::min(c, it->second);
      }
    }
    if (total == 0 || matched == 0) return 0.0;
    log_precisions.push_back(std::log(static_cast<double>(matched) /
                                      static_cast<double>(total)));
  }

  if (hyp_len == 0) return 0.0;
  double mean_log = 0.0;
  for (double lp : log_precisions) mean_log += lp;
  mean_log /= static_cast<double>(log_precisions.size());
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(mean_log);
}

double distinct_n(const std::vector<std::string>& hypotheses, int n) {
  if (n < 1) throw UsageError("distinct order must be >= 1");
  std::unordered_set<std::string> unique;
  long long total = 0;
  for (const auto& hyp : hypotheses) {
    for (auto& g : ngrams(word_tokenize(hyp), n)) {
      unique.insert(std::move(g));
      ++total;
    }
  }
  if (total == 0) throw DataError("no n-grams in hypothesis corpus");
  return 100.0 * static_cast<double>(unique.size()) /
         static_cast<double>(total);
}

namespace {

int lcs_length(const std::vector<std::string>& a,
               const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

double rouge_l(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw DataError("empty evaluation corpus");
  double sum = 0.0;
  for (const auto& pair : pairs) {
    const auto hyp = word_tokenize(pair.hypothesis);
    const auto ref = word_tokenize(pair.reference);
    if (hyp.empty() || ref.empty()) continue;
    const int lcs = lcs_length(hyp, ref);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    sum += 2.0 * p * r / (p + r);
  }
  return 100.0 * sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------
// METEOR.

namespace {

// Greedy leftmost alignment: each hypothesis token matches the first
// unclaimed reference token, exact matches first, then stems over the
// remainder. Returns ref index per hyp position (-1 unmatched).
std::vector<int> meteor_alignment(const std::vector<std::string>& hyp,
                                  const std::vector<std::string>& ref) {
  std::vector<int> match(hyp.size(), -1);
  std::vector<bool> used(ref.size(), false);
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && hyp[i] == ref[j]) {
        match[i] = static_cast<int>(j);
        used[j] = true;
        break;
      }
    }
  }
  std::vector<std::string> hyp_stem(hyp.size()), ref_stem(ref.size());
  for (std::size_t i = 0; i < hyp.size(); ++i) hyp_stem[i] = porter_stem(hyp[i]);
  for (std::size_t j = 0; j < ref.size(); ++j) ref_stem[j] = porter_stem(ref[j]);
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (match[i] >= 0) continue;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && hyp_stem[i] == ref_stem[j]) {
        match[i] = static_cast<int>(j);
        used[j] = true;
        break;
      }
    }
  }
  return match;
}

double meteor_pair(const std::vector<std::string>& hyp,
                   const std::vector<std::string>& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const std::vector<int> match = meteor_alignment(hyp, ref);
  int m = 0;
  for (int j : match) m += j >= 0 ? 1 : 0;
  if (m == 0) return 0.0;

  const double p = static_cast<double>(m) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(m) / static_cast<double>(ref.size());
  const double alpha = 0.9;
  const double f = p * r / (alpha * p + (1.0 - alpha) * r);

  // Chunks: maximal runs adjacent in both sequences.
  int chunks = 0;
  int prev_ref = -2;
  for (std::size_t i = 0; i < match.size(); ++i) {
    if (match[i] < 0) continue;
    const bool continues =
        i > 0 && match[i - 1] >= 0 && match[i] == prev_ref + 1;
    if (!continues) ++chunks;
    prev_ref = match[i];
  }
  const double gamma = 0.5, beta = 3.0;
  const double penalty =
      gamma * std::pow(static_cast<double>(chunks) / static_cast<double>(m),
                       beta);
  return f * (1.0 - penalty);
}

}  // namespace

double meteor_simplified(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw DataError("empty evaluation corpus");
  double sum = 0.0;
  for (const auto& pair : pairs) {
    sum += meteor_pair(word_tokenize(pair.hypothesis),
                       word_tokenize(pair.reference));
  }
  return 100.0 * sum / static_cast<double>(pairs.size());
}

std::optional<double> phrase_coverage(const std::vector<EvalPair>& pairs,
                                      const std::set<std::string>& stopwords,
                                      int max_phrase_len) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& pair : pairs) {
    const auto ref_phrases =
        extract_candidate_phrases(pair.reference, stopwords, max_phrase_len);
    if (ref_phrases.empty()) continue;
    const auto hyp_list =
        extract_candidate_phrases(pair.hypothesis, stopwords, max_phrase_len);
    const std::set<std::string> hyp_set(hyp_list.begin(), hyp_list.end());
    int covered = 0;
    for (const auto& ph : ref_phrases) covered += hyp_set.count(ph) ? 1 : 0;
    sum += static_cast<double>(covered) /
           static_cast<double>(ref_phrases.size());
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return 100.0 * sum / static_cast<double>(counted);
}

namespace {

std::set<int> text_aspects(const std::string& text,
                           const PhraseAspectTable& table,
                           const std::set<std::string>& stopwords,
                           int max_phrase_len) {
  std::set<int> out;
  for (const auto& phrase :
       extract_candidate_phrases(text, stopwords, max_phrase_len)) {
    const auto aspect = table.lookup(phrase);
    if (aspect.has_value()) out.insert(*aspect);
  }
  return out;
}

}  // namespace

std::optional<double> aspect_coverage(const std::vector<EvalPair>& pairs,
                                      const PhraseAspectTable& table,
                                      const std::set<std::string>& stopwords,
                                      int max_phrase_len) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& pair : pairs) {
    const std::set<int> ref_aspects =
        text_aspects(pair.reference, table, stopwords, max_phrase_len);
    if (ref_aspects.empty()) continue;
    const std::set<int> hyp_aspects =
        text_aspects(pair.hypothesis, table, stopwords, max_phrase_len);
    int covered = 0;
    for (int a : ref_aspects) covered += hyp_aspects.count(a) ? 1 : 0;
    sum += static_cast<double>(covered) / static_cast<double>(ref_aspects.size());
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return 100.0 * sum / static_cast<double>(counted);
}

std::map<std::string, int> majority_votes(const std::vector<Ballot>& ballots) {
  std::map<std::string, std::vector<std::string>> by_question;
  for (const auto& b : ballots) {
    by_question[b.question_id].push_back(b.model_choice);
  }
  std::map<std::string, int> counts;
  for (const auto& [qid, votes] : by_question) {
    if (votes.size() != 3) {
      throw DataError("question " + qid + " has " +
                      std::to_string(votes.size()) + " ballots, expected 3");
    }
    std::map<std::string, int> tally;
    for (const auto& v : votes) ++tally[v];
    for (const auto& [model, c] : tally) {
      if (c >= 2) {
        ++counts[model];
        break;
      }
    }
  }
  return counts;
}

// ---------------------------------------------------------------------
// Porter stemmer (the 1980 algorithm, ASCII lowercase input).

namespace {

class Porter {
 public:
  explicit Porter(std::string w) : w_(std::move(w)) {}

  std::string run() {
    if (w_.size() <= 2) return w_;
    step1a();
    step1b();
    step1c();
    step2();
    step3();
    step4();
    step5a();
    step5b();
    return w_;
  }

 private:
  bool is_cons(std::size_t i) const {
    switch (w_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u':
        return false;
      case 'y':
        return i == 0 ? true : !is_cons(i - 1);
      default:
        return true;
    }
  }

  // Measure of w_[0..end): number of VC sequences.
  int measure(std::size_t end) const {
    int m = 0;
    std::size_t i = 0;
    while (i < end && is_cons(i)) ++i;
    while (i < end) {
      while (i < end && !is_cons(i)) ++i;
      if (i >= end) break;
      ++m;
      while (i < end && is_cons(i)) ++i;
    }
    return m;
  }

  bool has_vowel(std::size_t end) const {
    for (std::size_t i = 0; i < end; ++i) {
      if (!is_cons(i)) return true;
    }
    return false;
  }

  bool double_cons_end(std::size_t end) const {
    return end >= 2 && w_[end - 1] == w_[end - 2] && is_cons(end - 1);
  }

  bool cvc_end(std::size_t end) const {
    if (end < 3) return false;
    if (!is_cons(end - 3) || is_cons(end - 2) || !is_cons(end - 1)) {
      return false;
    }
    const char c = w_[end - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends_with(const char* suffix) const {
    const std::size_t n = std::char_traits<char>::length(suffix);
    return w_.size() >= n && w_.compare(w_.size() - n, n, suffix) == 0;
  }

  std::size_t stem_len(const char* suffix) const {
    return w_.size() - std::char_traits<char>::length(suffix);
  }

  // Replace suffix when the measure condition on the stem holds.
  bool replace_if(const char* suffix, const char* repl, int min_m) {
    if (!ends_with(suffix)) return false;
    const std::size_t stem = stem_len(suffix);
    if (measure(stem) <= min_m) return true;  // matched but not replaced
    w_ = w_.substr(0, stem) + repl;
    return true;
  }

  void step1a() {
    if (ends_with("sses")) {
      w_.resize(w_.size() - 2);
    } else if (ends_with("ies")) {
      w_.resize(w_.size() - 2);
    } else if (!ends_with("ss") && ends_with("s")) {
      w_.resize(w_.size() - 1);
    }
  }

  void step1b() {
    bool cleanup = false;
    if (ends_with("eed")) {
      if (measure(stem_len("eed")) > 0) w_.resize(w_.size() - 1);
    } else if (ends_with("ed") && has_vowel(stem_len("ed"))) {
      w_.resize(w_.size() - 2);
      cleanup = true;
    } else if (ends_with("ing") && has_vowel(stem_len("ing"))) {
      w_.resize(w_.size() - 3);
      cleanup = true;
    }
    if (!cleanup) return;
    if (ends_with("at") || ends_with("bl") || ends_with("iz")) {
      w_ += 'e';
    } else if (double_cons_end(w_.size())) {
      const char c = w_.back();
      if (c != 'l' && c != 's' && c != 'z') w_.resize(w_.size() - 1);
    } else if (measure(w_.size()) == 1 && cvc_end(w_.size())) {
      w_ += 'e';
    }
  }

  void step1c() {
    if (ends_with("y") && has_vowel(w_.size() - 1)) {
      w_.back() = 'i';
    }
  }

  void step2() {
    static const std::pair<const char*, const char*> rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},
        {"anci", "ance"},   {"izer", "ize"},    {"abli", "able"},
        {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},
        {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},
        {"iviti", "ive"},   {"biliti", "ble"}};
    for (const auto& [suf, rep] : rules) {
      if (replace_if(suf, rep, 0)) return;
    }
  }

  void step3() {
    static const std::pair<const char*, const char*> rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
    for (const auto& [suf, rep] : rules) {
      if (replace_if(suf, rep, 0)) return;
    }
  }

  void step4() {
    static const char* suffixes[] = {"al",  "ance", "ence", "er",   "ic",
                                     "able","ible", "ant",  "ement","ment",
                                     "ent", "ion",  "ou",   "ism",  "ate",
                                     "iti", "ous",  "ive",  "ize"};
    for (const char* suf : suffixes) {
      if (!ends_with(suf)) continue;
      const std::size_t stem = stem_len(suf);
      if (measure(stem) > 1) {
        if (std::string(suf) == "ion" &&
            !(stem >= 1 && (w_[stem - 1] == 's' || w_[stem - 1] == 't'))) {
          return;
        }
        w_.resize(stem);
      }
      return;
    }
  }

  void step5a() {
    if (!ends_with("e")) return;
    const std::size_t stem = w_.size() - 1;
    const int m = measure(stem);
    if (m > 1 || (m == 1 && !cvc_end(stem))) w_.resize(stem);
  }

  void step5b() {
    if (measure(w_.size()) > 1 && double_cons_end(w_.size()) &&
        w_.back() == 'l') {
      w_.resize(w_.size() - 1);
    }
  }

  std::string w_;
};

}  // namespace

std::string porter_stem(const std::string& word) {
  for (char c : word) {
    if (c < 'a' || c > 'z') return word;  // stem plain ASCII words only
  }
  return Porter(word).run();
}

}  // namespace ilex
