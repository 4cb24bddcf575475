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

#include "ilex/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "ilex/text.hpp"
#include "json.hpp"

namespace ilex {

namespace {

enum class ByteClass { kSpace, kOtherWs, kWord, kPunct };

ByteClass classify(unsigned char c) {
  if (c == ' ') return ByteClass::kSpace;
  if (std::isspace(c)) return ByteClass::kOtherWs;
  if (std::isalnum(c) || c >= 0x80) return ByteClass::kWord;
  return ByteClass::kPunct;
}

std::uint64_t pack_pair(TokenId l, TokenId r) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) |
         static_cast<std::uint32_t>(r);
}

}  // namespace

std::vector<std::string> pretokenize(const std::string& text) {
  std::vector<std::string> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    if (text[j] == ' ' && j + 1 < n) {
      const ByteClass c = classify(static_cast<unsigned char>(text[j + 1]));
      if (c == ByteClass::kWord || c == ByteClass::kPunct) {
        std::size_t k = j + 1;
        while (k < n && classify(static_cast<unsigned char>(text[k])) == c) ++k;
        out.push_back(text.substr(j, k - j));
        i = k;
        continue;
      }
    }
    const ByteClass c = classify(static_cast<unsigned char>(text[j]));
    std::size_t k = j;
    while (k < n && classify(static_cast<unsigned char>(text[k])) == c) ++k;
    out.push_back(text.substr(j, k - j));
    i = k;
  }
  return out;
}

Vocab Vocab::train(const std::vector<std::string>& corpus, int vocab_size,
                   int n_aspects) {
  if (n_aspects < 1) throw UsageError("n_aspects must be >= 1");
  const int base = kNumSpecials + n_aspects + 256;
  if (vocab_size <= base) {
    throw UsageError("vocab_size must exceed specials + aspect tokens + byte "
                     "alphabet = " +
                     std::to_string(base));
  }

  Vocab v;
  v.n_aspects_ = n_aspects;
  const TokenId byte_base = v.byte_base();

  std::unordered_map<std::string, long long> pretoken_freq;
  for (const auto& text : corpus) {
    for (auto& pt : pretokenize(text)) ++pretoken_freq[pt];
  }

  struct Word {
    TokenSeq toks;
    long long freq;
  };
  std::vector<std::pair<std::string, long long>> sorted(pretoken_freq.begin(),
                                                        pretoken_freq.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Word> words;
  words.reserve(sorted.size());
  for (const auto& [pt, f] : sorted) {
    Word w;
    w.freq = f;
    w.toks.reserve(pt.size());
    for (unsigned char c : pt) w.toks.push_back(byte_base + c);
    words.push_back(std::move(w));
  }

  // Byte strings per token id, needed for lexicographic tie-breaking.
  std::vector<std::string> bytes_of(static_cast<std::size_t>(base));
  for (int b = 0; b < 256; ++b) {
    bytes_of[static_cast<std::size_t>(byte_base + b)] =
        std::string(1, static_cast<char>(b));
  }

  std::unordered_map<std::uint64_t, long long> pair_count;
  std::unordered_map<std::uint64_t, std::vector<int>> pair_words;
  auto scan_word = [&](int wi, long long sign, bool record) {
    const TokenSeq& t = words[static_cast<std::size_t>(wi)].toks;
    const long long f = words[static_cast<std::size_t>(wi)].freq;
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const std::uint64_t key = pack_pair(t[i], t[i + 1]);
      pair_count[key] += sign * f;
      if (record) pair_words[key].push_back(wi);
    }
  };
  for (int wi = 0; wi < static_cast<int>(words.size()); ++wi) {
    scan_word(wi, +1, true);
  }

  while (base + static_cast<int>(v.merges_.size()) < vocab_size) {
    bool found = false;
    std::uint64_t best_key = 0;
    long long best_count = 1;  // require count >= 2
    const std::string* best_l = nullptr;
    const std::string* best_r = nullptr;
    for (const auto& [key, cnt] : pair_count) {
      if (cnt < 2 || cnt < best_count) continue;
      const auto l = static_cast<TokenId>(key >> 32);
      const auto r = static_cast<TokenId>(key & 0xffffffffu);
      const std::string& lb = bytes_of[static_cast<std::size_t>(l)];
      const std::string& rb = bytes_of[static_cast<std::size_t>(r)];
      if (!found || cnt > best_count ||
          (cnt == best_count &&
           std::tie(lb, rb) < std::tie(*best_l, *best_r))) {
        found = true;
        best_key = key;
        best_count = cnt;
        best_l = &lb;
        best_r = &rb;
      }
    }
    if (!found) break;

    const auto l = static_cast<TokenId>(best_key >> 32);
    const auto r = static_cast<TokenId>(best_key & 0xffffffffu);
    const TokenId new_id = base + static_cast<TokenId>(v.merges_.size());
    v.merges_.emplace_back(l, r);
    bytes_of.push_back(bytes_of[static_cast<std::size_t>(l)] +
                       bytes_of[static_cast<std::size_t>(r)]);

    std::vector<int> affected = pair_words[best_key];
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()),
                   affected.end());
    for (int wi : affected) {
      TokenSeq& t = words[static_cast<std::size_t>(wi)].toks;
      bool has = false;
      for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        if (t[i] == l && t[i + 1] == r) {
          has = true;
          break;
        }
      }
      if (!has) continue;  // stale index
      scan_word(wi, -1, false);
      TokenSeq merged;
      merged.reserve(t.size());
      for (std::size_t i = 0; i < t.size();) {
        if (i + 1 < t.size() && t[i] == l && t[i + 1] == r) {
          merged.push_back(new_id);
          i += 2;
        } else {
          merged.push_back(t[i]);
          ++i;
        }
      }
      t = std::move(merged);
      scan_word(wi, +1, true);
    }
    pair_words.erase(best_key);
  }

  v.build_tables();
  return v;
}

void Vocab::build_tables() {
  display_ = {"[PAD]", "<s>", "</s>", "[MASK]", "[UNK]"};
  token_bytes_.assign(static_cast<std::size_t>(kNumSpecials), "");
  for (int a = 0; a < n_aspects_; ++a) {
    display_.push_back(a == n_aspects_ - 1 ? "[A_pad]"
                                           : "[A_" + std::to_string(a) + "]");
    token_bytes_.emplace_back();
  }
  for (int b = 0; b < 256; ++b) {
    token_bytes_.push_back(std::string(1, static_cast<char>(b)));
    display_.push_back(token_bytes_.back());
  }
  merge_rank_.clear();
  for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
    const auto [l, r] = merges_[rank];
    if (l < 0 || r < 0 || l >= static_cast<TokenId>(token_bytes_.size()) ||
        r >= static_cast<TokenId>(token_bytes_.size())) {
      throw DataError("invalid merge table entry at rank " +
                      std::to_string(rank));
    }
    token_bytes_.push_back(token_bytes_[static_cast<std::size_t>(l)] +
                           token_bytes_[static_cast<std::size_t>(r)]);
    display_.push_back(token_bytes_.back());
    merge_rank_[pack_pair(l, r)] = static_cast<int>(rank);
  }
}

TokenId Vocab::aspect_token(int aspect_index) const {
  if (aspect_index < 0 || aspect_index >= n_aspects_) {
    throw DataError("aspect index " + std::to_string(aspect_index) +
                    " out of range [0, " + std::to_string(n_aspects_) + ")");
  }
  return kAspectBase + aspect_index;
}

TokenSeq Vocab::apply_merges(TokenSeq word) const {
  if (merge_rank_.empty()) return word;
  while (word.size() >= 2) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      const auto it = merge_rank_.find(pack_pair(word[i], word[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto [l, r] = merges_[static_cast<std::size_t>(best_rank)];
    const TokenId merged_id = byte_base() + 256 + best_rank;
    TokenSeq out;
    out.reserve(word.size());
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == l && word[i + 1] == r) {
        out.push_back(merged_id);
        i += 2;
      } else {
        out.push_back(word[i]);
        ++i;
      }
    }
    word = std::move(out);
  }
  return word;
}

TokenSeq Vocab::encode_bytes(const std::string& bytes) const {
  TokenSeq out;
  for (const auto& pt : pretokenize(bytes)) {
    TokenSeq word;
    word.reserve(pt.size());
    for (unsigned char c : pt) word.push_back(byte_base() + c);
    word = apply_merges(std::move(word));
    out.insert(out.end(), word.begin(), word.end());
  }
  return out;
}

TokenSeq Vocab::encode(const std::string& text, bool add_boundaries) const {
  TokenSeq out;
  if (add_boundaries) out.push_back(kBos);
  TokenSeq body = encode_bytes(text);
  out.insert(out.end(), body.begin(), body.end());
  if (add_boundaries) out.push_back(kEos);
  return out;
}

const std::string& Vocab::token_string(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return display_[static_cast<std::size_t>(id)];
}

std::string Vocab::token_text_bytes(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return token_bytes_[static_cast<std::size_t>(id)];
}

std::string Vocab::decode(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) out += token_string(id);
  return out;
}

std::vector<Span> Vocab::find_phrase_spans(
    const TokenSeq& body, const std::vector<std::string>& phrases) const {
  const int n = static_cast<int>(body.size());
  std::vector<std::string> lower_bytes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    lower_bytes[static_cast<std::size_t>(i)] =
        lowercase(token_text_bytes(body[static_cast<std::size_t>(i)]));
  }

  std::vector<Span> claimed;
  std::vector<Span> result;
  for (const auto& phrase : phrases) {
    const std::string needle = lowercase(phrase);
    if (needle.empty()) throw DataError("empty constraint phrase");
    const std::string spaced = " " + needle;
    std::optional<Span> found;
    for (int s = 0; s < n && !found; ++s) {
      if (!is_text_token(body[static_cast<std::size_t>(s)])) continue;
      std::string acc;
      for (int e = s; e < n; ++e) {
        if (!is_text_token(body[static_cast<std::size_t>(e)])) break;
        acc += lower_bytes[static_cast<std::size_t>(e)];
        if (acc.size() > spaced.size()) break;
        if (acc == needle || acc == spaced) {
          Span cand{s, e + 1};
          bool overlap = false;
          for (const auto& c : claimed) overlap = overlap || cand.overlaps(c);
          if (!overlap) found = cand;
          break;
        }
      }
    }
    if (!found) {
      throw DataError("phrase not alignable to token boundaries: \"" + phrase +
                      "\"");
    }
    claimed.push_back(*found);
    result.push_back(*found);
  }
  return result;
}

std::pair<TokenSeq, std::vector<Span>> Vocab::align_phrase_spans(
    TokenSeq body, const std::vector<std::string>& phrases) const {
  // Work on the byte level: locate each phrase in the decoded text, split
  // any token that straddles an occurrence edge, then map occurrences back
  // to token spans. The decoded bytes never change.
  const auto token_text = [&](TokenId id) { return token_text_bytes(id); };

  std::string full;
  for (TokenId id : body) full += token_text(id);
  const std::string lower_full = lowercase(full);

  struct Range {
    std::size_t a, b;
  };
  std::vector<Range> ranges;
  for (const auto& phrase : phrases) {
    const std::string needle = lowercase(phrase);
    if (needle.empty()) throw DataError("empty constraint phrase");
    std::optional<Range> pick;
    std::size_t from = 0;
    while (true) {
      const std::size_t pos = lower_full.find(needle, from);
      if (pos == std::string::npos) break;
      Range cand{pos, pos + needle.size()};
      bool overlap = false;
      for (const auto& r : ranges) {
        overlap = overlap || (cand.a < r.b && r.a < cand.b);
      }
      if (!overlap) {
        pick = cand;
        break;
      }
      from = pos + 1;
    }
    if (!pick) {
      throw DataError("constraint phrase not found in text: \"" + phrase +
                      "\"");
    }
    ranges.push_back(*pick);
  }

  // Boundaries where tokenization must break.
  std::vector<std::size_t> cuts;
  for (const auto& r : ranges) {
    cuts.push_back(r.a);
    cuts.push_back(r.b);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  TokenSeq rebuilt;
  std::vector<std::size_t> tok_start;  // byte offset of each rebuilt token
  std::size_t off = 0;
  for (TokenId id : body) {
    const std::string bytes = token_text(id);
    if (bytes.empty()) {
      rebuilt.push_back(id);
      tok_start.push_back(off);
      continue;
    }
    std::vector<std::size_t> inner;
    for (std::size_t c : cuts) {
      if (c > off && c < off + bytes.size()) inner.push_back(c - off);
    }
    if (inner.empty()) {
      rebuilt.push_back(id);
      tok_start.push_back(off);
    } else {
      inner.push_back(bytes.size());
      std::size_t piece_start = 0;
      std::size_t piece_off = off;
      for (std::size_t cut : inner) {
        const TokenSeq piece =
            encode_bytes(bytes.substr(piece_start, cut - piece_start));
        std::size_t po = piece_off;
        for (TokenId pid : piece) {
          rebuilt.push_back(pid);
          tok_start.push_back(po);
          po += token_text(pid).size();
        }
        piece_off += cut - piece_start;
        piece_start = cut;
      }
    }
    off += bytes.size();
  }
  tok_start.push_back(off);  // sentinel

  std::vector<Span> spans;
  for (const auto& r : ranges) {
    int begin = -1, end = -1;
    for (std::size_t i = 0; i < rebuilt.size(); ++i) {
      const std::size_t ts = tok_start[i];
      const std::size_t te = ts + token_text(rebuilt[i]).size();
      if (te <= ts) continue;  // zero-byte token
      if (ts >= r.a && te <= r.b) {
        if (begin < 0) begin = static_cast<int>(i);
        end = static_cast<int>(i) + 1;
      }
    }
    if (begin < 0) {
      throw DataError("internal: phrase splice failed");
    }
    spans.push_back(Span{begin, end});
  }
  return {std::move(rebuilt), std::move(spans)};
}

std::string Vocab::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["n_aspects"] = n_aspects_;
  j["aspect_base"] = kAspectBase;
  j["specials"] = {{"pad", kPad},
                   {"bos", kBos},
                   {"eos", kEos},
                   {"mask", kMask},
                   {"unk", kUnk}};
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  j["merges"] = std::move(merges);
  return j.dump();
}

Vocab Vocab::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid vocab file: ") + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw LineageError("unsupported vocab file version");
  }
  Vocab v;
  v.n_aspects_ = j.at("n_aspects").get<int>();
  if (v.n_aspects_ < 1) throw DataError("vocab file: n_aspects < 1");
  for (const auto& m : j.at("merges")) {
    v.merges_.emplace_back(m.at(0).get<TokenId>(), m.at(1).get<TokenId>());
  }
  v.build_tables();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file: " + path);
  out << to_json();
  if (!out) throw DataError("failed writing vocab file: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocab file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string Vocab::hash() const { return to_hex(fnv1a64(to_json())); }

}  // namespace ilex
