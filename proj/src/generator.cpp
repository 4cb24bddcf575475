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

#include "ilex/generator.hpp"

#include <algorithm>
#include <cmath>

#include "ilex/text.hpp"

namespace ilex {

void GenerationConfig::validate() const {
  if (max_stages < 1) throw UsageError("max_stages must be >= 1");
  if (max_body_len < 2) throw UsageError("max_body_len must be >= 2");
  if (decode == Decode::kTopK) {
    if (top_k < 1) throw UsageError("top_k must be >= 1");
    if (temperature <= 0.0) throw UsageError("temperature must be > 0");
  }
}

StartStage make_start(const StartSpec& spec, const Vocab& vocab,
                      int max_segment_len) {
  StartStage out;
  out.stage.refs = spec.refs;
  if (static_cast<int>(out.stage.refs.size()) > max_segment_len) {
    out.stage.refs.erase(out.stage.refs.begin(),
                         out.stage.refs.end() - max_segment_len);
  }

  if (spec.aspect_mode) {
    out.stage.aspect = {vocab.aspect_token(spec.aspect_id)};
    out.stage.body = {Vocab::kBos, Vocab::kEos};
    return out;
  }

  out.stage.aspect = {vocab.aspect_token(vocab.pad_aspect_index())};
  out.stage.body = {Vocab::kBos};
  for (const auto& phrase : spec.phrases) {
    const std::string norm = normalize_whitespace(phrase);
    if (norm.empty()) throw DataError("empty constraint phrase");
    const TokenSeq toks = vocab.encode(" " + norm, false);
    const int begin = static_cast<int>(out.stage.body.size());
    out.stage.body.insert(out.stage.body.end(), toks.begin(), toks.end());
    out.protected_spans.push_back(
        Span{begin, static_cast<int>(out.stage.body.size())});
  }
  out.stage.body.push_back(Vocab::kEos);
  return out;
}

namespace {

// Argmax over a logits row; ties resolve to the lowest index.
template <typename Derived>
int row_argmax(const Eigen::MatrixBase<Derived>& row) {
  int best = 0;
  for (int j = 1; j < row.cols(); ++j) {
    if (row(0, j) > row(0, best)) best = j;
  }
  return best;
}

TokenId pick_token(const RowMat<float>& logits, Eigen::Index row,
                   const Vocab& vocab, const GenerationConfig& cfg, Rng& rng) {
  const TokenId first_text = vocab.byte_base();
  const int n = static_cast<int>(logits.cols());
  if (cfg.decode == GenerationConfig::Decode::kGreedy) {
    TokenId best = first_text;
    for (TokenId j = first_text; j < n; ++j) {
      if (logits(row, j) > logits(row, best)) best = j;
    }
    return best;
  }

  // Top-k with temperature applied before truncation; ties in the cut
  // break toward the smaller token id.
  std::vector<std::pair<double, TokenId>> scored;
  scored.reserve(static_cast<std::size_t>(n - first_text));
  for (TokenId j = first_text; j < n; ++j) {
    scored.emplace_back(static_cast<double>(logits(row, j)) / cfg.temperature,
                        j);
  }
  const std::size_t k =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.top_k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k),
                    scored.end(), [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  double maxv = scored[0].first;
  double sum = 0.0;
  std::vector<double> probs(k);
  for (std::size_t i = 0; i < k; ++i) {
    probs[i] = std::exp(scored[i].first - maxv);
    sum += probs[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < k; ++i) {
    u -= probs[i];
    if (u <= 0.0) return scored[i].second;
  }
  return scored[k - 1].second;
}

}  // namespace

StepResult step(const InsertionModel<float>& model, const Stage& stage,
                const std::vector<Span>& protected_spans, const Vocab& vocab,
                const GenerationConfig& cfg, Rng& rng) {
  cfg.validate();
  const int prefix = stage.prefix_size();
  const int body_len = static_cast<int>(stage.body.size());
  const RowMat<float> count_logits = model.forward_counts(stage);

  std::vector<std::int32_t> counts(static_cast<std::size_t>(body_len), 0);
  int budget = cfg.max_body_len - body_len;
  for (int i = 0; i < body_len - 1; ++i) {  // no slot after EOS
    bool interior = false;
    for (const auto& s : protected_spans) {
      if (s.contains(i) && i != s.end - 1) {
        interior = true;
        break;
      }
    }
    if (interior) continue;
    int c = row_argmax(count_logits.row(prefix + i));
    c = std::min(c, std::max(0, budget));
    counts[static_cast<std::size_t>(i)] = c;
    budget -= c;
  }

  const bool any = std::any_of(counts.begin(), counts.end(),
                               [](std::int32_t c) { return c > 0; });
  if (!any) {
    return StepResult{stage, protected_spans, false};
  }

  Stage inter = stage;
  inter.body = mask_insert(counts, stage.body);

  // Remap spans past inserted MASKs; interiors receive none, so each span
  // only shifts.
  std::vector<Span> new_spans = protected_spans;
  std::vector<int> shift(static_cast<std::size_t>(body_len) + 1, 0);
  for (int i = 0; i < body_len; ++i) {
    shift[static_cast<std::size_t>(i) + 1] =
        shift[static_cast<std::size_t>(i)] + counts[static_cast<std::size_t>(i)];
  }
  for (auto& s : new_spans) {
    const int size = s.size();
    s.begin += shift[static_cast<std::size_t>(s.begin)];
    s.end = s.begin + size;
  }

  const RowMat<float> token_logits =
      model.forward_tokens(inter, nullptr, nullptr);
  Stage next = inter;
  for (std::size_t i = 0; i < next.body.size(); ++i) {
    if (next.body[i] != Vocab::kMask) continue;
    const auto row = static_cast<Eigen::Index>(prefix + i);
    next.body[i] = pick_token(token_logits, row, vocab, cfg, rng);
  }
  return StepResult{std::move(next), std::move(new_spans), true};
}

GenerationResult generate(const InsertionModel<float>& model,
                          const StartSpec& spec, const Vocab& vocab,
                          const GenerationConfig& cfg) {
  cfg.validate();
  StartStage start = make_start(spec, vocab, model.config().max_segment_len);

  GenerationResult out;
  out.trace.push_back(start.stage);
  Stage current = start.stage;
  std::vector<Span> spans = start.protected_spans;
  Rng rng(cfg.seed);
  for (int round = 0; round < cfg.max_stages; ++round) {
    StepResult res = step(model, current, spans, vocab, cfg, rng);
    if (!res.changed) break;
    current = std::move(res.stage);
    spans = std::move(res.protected_spans);
    out.trace.push_back(current);
    ++out.n_stages;
  }

  TokenSeq inner(current.body.begin() + 1, current.body.end() - 1);
  std::string text = vocab.decode(inner);
  // Trim the attachment spaces introduced by mid-text token forms.
  const std::size_t a = text.find_first_not_of(' ');
  const std::size_t b = text.find_last_not_of(' ');
  out.text = a == std::string::npos ? "" : text.substr(a, b - a + 1);
  return out;
}

std::vector<GenerationResult> batch_generate(const InsertionModel<float>& model,
                                             const std::vector<StartSpec>& specs,
                                             const Vocab& vocab,
                                             const GenerationConfig& cfg) {
  std::vector<GenerationResult> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    // Seed from spec content, not batch position.
    std::uint64_t h = 0x5bd1;
    for (const auto& p : spec.phrases) {
      h = fnv1a64(p.data(), p.size(), h);
      h = mix_seed(h, p.size());
    }
    if (!spec.refs.empty()) {
      h = fnv1a64(spec.refs.data(), spec.refs.size() * sizeof(TokenId), h);
    }
    h = mix_seed(h, static_cast<std::uint64_t>(
                        spec.aspect_mode ? 1000 + spec.aspect_id : 0));
    GenerationConfig local = cfg;
    local.seed = mix_seed(cfg.seed, h);
    out.push_back(generate(model, spec, vocab, local));
  }
  return out;
}

}  // namespace ilex
