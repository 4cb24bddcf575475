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

#ifndef ILEX_TOKENIZER_HPP_
#define ILEX_TOKENIZER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ilex/common.hpp"

namespace ilex {

// Byte-level BPE vocabulary.
//
// Id layout, fixed by construction:
//   [0..4]                      specials: PAD BOS EOS MASK UNK
//   [5 .. 5+n_aspects)          aspect tokens; the last one is the pad aspect
//   [byte_base .. byte_base+256) single-byte tokens
//   [byte_base+256 ..)          merged tokens, in merge order
//
// Every merged token's byte string is the concatenation of its parents, so
// decode(encode(text)) is byte-exact for arbitrary input. UNK is never
// produced by encoding; it exists only for checkpoint compatibility.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kAspectBase = 5;
  static constexpr int kNumSpecials = 5;

  Vocab() = default;

  // Greedy pair-frequency BPE training. Merging stops once `vocab_size`
  // ids exist or no pair occurs at least twice; frequency ties break on
  // the lexicographically smaller (left bytes, right bytes) pair.
  static Vocab train(const std::vector<std::string>& corpus, int vocab_size,
                     int n_aspects);

  int size() const { return static_cast<int>(token_bytes_.size()); }
  int n_aspects() const { return n_aspects_; }
  TokenId aspect_base() const { return kAspectBase; }
  TokenId byte_base() const { return kAspectBase + n_aspects_; }
  int n_merges() const { return static_cast<int>(merges_.size()); }

  // Aspect index -> token id. The pad aspect is index n_aspects-1.
  TokenId aspect_token(int aspect_index) const;
  int pad_aspect_index() const { return n_aspects_ - 1; }
  bool is_special(TokenId id) const { return id < kNumSpecials; }
  bool is_aspect(TokenId id) const {
    return id >= kAspectBase && id < byte_base();
  }
  // Tokens that carry text bytes (single bytes and merges).
  bool is_text_token(TokenId id) const {
    return id >= byte_base() && id < size();
  }

  TokenSeq encode(const std::string& text, bool add_boundaries) const;

  // Rendered string: text tokens yield their bytes, specials and aspects
  // their display form ("<s>", "</s>", "[MASK]", "[A_3]", ...).
  std::string decode(const TokenSeq& ids) const;
  const std::string& token_string(TokenId id) const;

  // Byte contribution of a token to decoded text: empty for specials
  // and aspect tokens.
  std::string token_text_bytes(TokenId id) const;

  // For each phrase, the leftmost token-aligned span of `body` whose
  // decoded bytes equal the phrase (case-insensitive, an attached
  // leading space on the first token is tolerated). Spans do not
  // overlap each other. Throws DataError naming the phrase when no
  // aligned span exists.
  std::vector<Span> find_phrase_spans(const TokenSeq& body,
                                      const std::vector<std::string>& phrases) const;

  // Like find_phrase_spans, but when a phrase occurs in the decoded text
  // without landing on token boundaries, the covering tokens are re-split
  // so that it does. Decoded bytes are unchanged. Returns the (possibly
  // re-tokenized) body together with the spans.
  std::pair<TokenSeq, std::vector<Span>> align_phrase_spans(
      TokenSeq body, const std::vector<std::string>& phrases) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
  std::string to_json() const;
  static Vocab from_json(const std::string& json_text);

  // Lineage hash over the canonical JSON serialization.
  std::string hash() const;

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  void build_tables();
  TokenSeq encode_bytes(const std::string& bytes) const;
  TokenSeq apply_merges(TokenSeq word) const;

  int n_aspects_ = 0;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  // Derived (rebuilt from merges_):
  std::vector<std::string> token_bytes_;  // text bytes; "" for non-text ids
  std::vector<std::string> display_;      // rendered form for every id
  std::unordered_map<std::uint64_t, int> merge_rank_;  // packed pair -> rank
};

// Pretokenization boundaries: runs of one byte class (word, punctuation,
// whitespace), with a single preceding space attached to the run it
// precedes. Merges never cross these boundaries.
std::vector<std::string> pretokenize(const std::string& text);

}  // namespace ilex

#endif  // ILEX_TOKENIZER_HPP_
