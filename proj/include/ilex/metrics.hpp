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

#ifndef ILEX_METRICS_HPP_
#define ILEX_METRICS_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ilex/common.hpp"
#include "ilex/corpus.hpp"

namespace ilex {

struct EvalPair {
  std::string hypothesis;
  std::string reference;
  std::vector<std::string> constraints;
};

// All scores are percentages in [0, 100]. Tokenization is shared across
// the n-gram metrics: lowercase, punctuation separated, whitespace split.

// Corpus-level BLEU-n: geometric mean of modified 1..n-gram precisions
// with brevity penalty, no smoothing. n in {1, 2}.
double bleu_n(const std::vector<EvalPair>& pairs, int n);

// Unique n-grams over all hypotheses divided by total n-gram count.
double distinct_n(const std::vector<std::string>& hypotheses, int n);

// Mean per-pair LCS F1.
double rouge_l(const std::vector<EvalPair>& pairs);

// Harmonic-mean METEOR with alpha=0.9, gamma=0.5, beta=3, exact-then-stem
// unigram matching, no synonym resources. Mean over pairs.
double meteor_simplified(const std::vector<EvalPair>& pairs);

// Fraction of reference phrases (per the candidate-phrase extractor) that
// also occur among hypothesis phrases, over pairs with at least one
// reference phrase. Absent when no pair qualifies.
std::optional<double> phrase_coverage(const std::vector<EvalPair>& pairs,
                                      const std::set<std::string>& stopwords,
                                      int max_phrase_len = 4);

// Mean per-pair |aspects(hyp) n aspects(ref)| / |aspects(ref)| over pairs
// whose reference maps to at least one aspect.
std::optional<double> aspect_coverage(const std::vector<EvalPair>& pairs,
                                      const PhraseAspectTable& table,
                                      const std::set<std::string>& stopwords,
                                      int max_phrase_len = 4);

struct Ballot {
  std::string question_id;
  std::string model_choice;
};

// Majority voting with exactly three ballots per question: a question
// counts for the model holding at least two votes; three-way splits are
// ignored. Any question with a ballot count other than three is an error.
std::map<std::string, int> majority_votes(const std::vector<Ballot>& ballots);

// Porter-style stemmer used by METEOR's second matching stage.
std::string porter_stem(const std::string& word);

}  // namespace ilex

#endif  // ILEX_METRICS_HPP_
