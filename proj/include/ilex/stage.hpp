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

#ifndef ILEX_STAGE_HPP_
#define ILEX_STAGE_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ilex/common.hpp"
#include "ilex/rng.hpp"
#include "ilex/tokenizer.hpp"

namespace ilex {

enum Segment : int { kSegRef = 0, kSegAspect = 1, kSegBody = 2 };

// One snapshot of the text during staged insertion. The references and
// aspect segments are empty for non-personalized (pretraining) stages.
// The body always starts with BOS and ends with EOS; positions restart
// at 0 within each segment.
struct Stage {
  TokenSeq refs;
  TokenSeq aspect;  // at most one aspect token
  TokenSeq body;

  int prefix_size() const {
    return static_cast<int>(refs.size() + aspect.size());
  }
  int size() const { return prefix_size() + static_cast<int>(body.size()); }

  friend bool operator==(const Stage&, const Stage&) = default;
};

struct FlatStage {
  TokenSeq ids;
  std::vector<int> positions;
  std::vector<int> segments;
};

FlatStage flatten(const Stage& stage);

// One supervised insertion step. `intermediate` keeps its MASK tokens
// untouched; `corrupted_body` is the encoder input for the token task
// after the stay/restore/randomize noise has been applied at masked
// positions. Counts are raw (unclamped); clamping to the head arity
// happens when labels are formed.
struct TrainingInstance {
  Stage prev;
  Stage intermediate;
  Stage target;
  TokenSeq corrupted_body;
  std::vector<std::int32_t> insert_counts;   // over prev tokens, prefix zeros
  std::vector<std::uint8_t> token_loss_mask; // over intermediate tokens
  std::vector<std::uint8_t> count_loss_mask; // over prev tokens
  std::uint64_t example_id = 0;
  bool aspect_mode = false;

  Stage corrupted_stage() const {
    return Stage{intermediate.refs, intermediate.aspect, corrupted_body};
  }

  friend bool operator==(const TrainingInstance&, const TrainingInstance&) =
      default;
};

struct MaskDeleteResult {
  TokenSeq intermediate;
  std::vector<std::int32_t> counts;  // over prev_body tokens
  TokenSeq prev_body;
  std::vector<int> masked_positions;  // ascending indices into the input body
};

// Deterministic core: replace the given body positions with MASK, delete
// them to form the previous stage, and record how many deletions follow
// each surviving token.
MaskDeleteResult apply_mask_delete(const TokenSeq& body,
                                   const std::vector<int>& mask_positions);

// One masking round. Masking follows the MLM convention: of the n
// deletable tokens (never BOS/EOS or protected spans), a uniform subset
// of size max(1, round(p*n)) is masked; nothing is masked when n == 0.
MaskDeleteResult mask_and_delete(const TokenSeq& body, double p,
                                 const std::vector<Span>& protected_spans,
                                 Rng& rng);

struct ChainPair {
  TokenSeq prev_body;
  TokenSeq intermediate_body;
  std::vector<std::int32_t> counts;  // over prev_body tokens
  TokenSeq next_body;
};

// Repeated mask-and-delete until only boundaries and constraint tokens
// remain, returned in generation order (the constraint-only stage pair
// first). A body with nothing deletable yields an empty chain.
std::vector<ChainPair> build_chain(const TokenSeq& body, double p,
                                   const std::vector<Span>& constraints,
                                   Rng& rng);

// Wrap a chain pair with the personalization prefix: refs tokens plus one
// aspect token, zero insertion counts over the prefix. A negative
// aspect_token leaves the aspect segment empty (pretraining layout).
TrainingInstance personalize(const ChainPair& pair, const TokenSeq& refs,
                             TokenId aspect_token);

// 10/10/80 corruption at masked body positions: stay MASK with p=0.8,
// restore the target token with p=0.1, replace with a uniform random
// text token with p=0.1. Returns the corrupted body; the mask marks
// exactly the original MASK positions.
std::pair<TokenSeq, std::vector<std::uint8_t>> corrupt_for_token_loss(
    const TokenSeq& intermediate_body, const TokenSeq& target_body,
    const Vocab& vocab, Rng& rng);

// Count-loss mask over full-length counts: prefix positions are always
// excluded, nonzero counts always included, zero counts dropped with
// probability q.
std::vector<std::uint8_t> mask_count_labels(
    const std::vector<std::int32_t>& counts, int prefix_len, double q,
    Rng& rng);

// Insert counts[i] MASK tokens after token i. Rejects negative counts.
TokenSeq mask_insert(const std::vector<std::int32_t>& counts,
                     const TokenSeq& body);
Stage mask_insert_stage(const std::vector<std::int32_t>& counts,
                        const Stage& prev);

// ---------------------------------------------------------------------
// Epoch instance construction.

// A tokenized example ready for chain construction. Pretraining sources
// carry only a body; fine-tuning sources add references, an aspect token
// and the sampled constraint spans.
struct SourceExample {
  std::uint64_t id = 0;
  TokenSeq body;
  std::vector<Span> constraints;
  TokenSeq refs;
  TokenId aspect_token = -1;  // < 0: none (pretraining)

  friend bool operator==(const SourceExample&, const SourceExample&) = default;
};

struct BuildParams {
  double p = 0.2;
  double q = 0.9;
  double p_aspect = 0.25;
  int d_ins = 8;
  bool finetune = false;
  // Chains are redrawn every epoch by default; when off, the epoch-0
  // chains are reused and only the loss masks and corruption vary.
  bool resample_chains = true;
  // Append a terminal instance (prev == target, all-zero counts) per
  // chain so the insertion head also learns when to stop.
  bool add_stop_instance = true;
  // Pretraining draws this many random protected spans per sentence
  // (uniform in [0, max_random_spans]).
  int max_random_spans = 2;
  std::uint64_t seed = 1;
};

// Deterministic in (sources, params, epoch). Fine-tuning samples the
// aspect starting stage per example with probability p_aspect; lexical
// examples protect their constraint spans and use the pad aspect.
std::vector<TrainingInstance> build_epoch_instances(
    const std::vector<SourceExample>& sources, const Vocab& vocab,
    const BuildParams& params, int epoch);

// Instances for a single example; exposed for tests and statistics.
std::vector<TrainingInstance> build_example_instances(
    const SourceExample& source, const Vocab& vocab, const BuildParams& params,
    int epoch, bool* aspect_mode_out = nullptr);

// ---------------------------------------------------------------------
// Binary serialization (little-endian, length-prefixed records).

void write_instances(std::ostream& out,
                     const std::vector<TrainingInstance>& instances);
std::vector<TrainingInstance> read_instances(std::istream& in);
void write_instances_file(const std::string& path,
                          const std::vector<TrainingInstance>& instances);
std::vector<TrainingInstance> read_instances_file(const std::string& path);

void write_sources_file(const std::string& path,
                        const std::vector<SourceExample>& sources);
std::vector<SourceExample> read_sources_file(const std::string& path);

}  // namespace ilex

#endif  // ILEX_STAGE_HPP_
