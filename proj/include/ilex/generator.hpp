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

#ifndef ILEX_GENERATOR_HPP_
#define ILEX_GENERATOR_HPP_

#include <string>
#include <vector>

#include "ilex/model.hpp"
#include "ilex/stage.hpp"
#include "ilex/tokenizer.hpp"

namespace ilex {

struct GenerationConfig {
  enum class Decode { kGreedy, kTopK };
  Decode decode = Decode::kGreedy;
  int top_k = 10;
  double temperature = 1.0;
  int max_stages = 10;
  int max_body_len = 96;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StartSpec {
  TokenSeq refs;  // already tokenized, oldest first
  bool aspect_mode = false;
  int aspect_id = -1;  // aspect index for aspect mode
  std::vector<std::string> phrases;  // lexical constraints, in order
};

struct StartStage {
  Stage stage;
  std::vector<Span> protected_spans;  // body token indices
};

// Aspect mode: empty body between boundaries, the given aspect token, no
// protected spans. Lexical mode: the phrases in order between the
// boundaries (each with an attached leading space, the form they take
// mid-text), one protected span per phrase, pad aspect. Refs are
// truncated from the left when over budget.
StartStage make_start(const StartSpec& spec, const Vocab& vocab,
                      int max_segment_len);

struct StepResult {
  Stage stage;
  std::vector<Span> protected_spans;
  bool changed = false;
};

// One insertion round: argmax counts per body slot (forced to zero
// strictly inside protected spans, at the EOS slot, and beyond the body
// budget), MASK insertion, then token filling under the decoding
// strategy. Special and aspect tokens are never filled in. A stage with
// all-zero counts is returned unchanged.
StepResult step(const InsertionModel<float>& model, const Stage& stage,
                const std::vector<Span>& protected_spans, const Vocab& vocab,
                const GenerationConfig& cfg, Rng& rng);

struct GenerationResult {
  std::string text;
  std::vector<Stage> trace;  // starting stage first
  int n_stages = 0;          // insertion rounds actually performed
};

// Repeats step until a fixed point or max_stages, strips the prefix and
// boundaries, and decodes. Every lexical constraint appears verbatim and
// in order in the output.
GenerationResult generate(const InsertionModel<float>& model,
                          const StartSpec& spec, const Vocab& vocab,
                          const GenerationConfig& cfg);

// Element-wise generate with per-spec seeds derived from spec content,
// so permuting the batch permutes the outputs.
std::vector<GenerationResult> batch_generate(const InsertionModel<float>& model,
                                             const std::vector<StartSpec>& specs,
                                             const Vocab& vocab,
                                             const GenerationConfig& cfg);

}  // namespace ilex

#endif  // ILEX_GENERATOR_HPP_
