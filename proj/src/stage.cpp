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

#include "ilex/stage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ilex/binio.hpp"

namespace ilex {

FlatStage flatten(const Stage& stage) {
  FlatStage flat;
  flat.ids.reserve(static_cast<std::size_t>(stage.size()));
  auto add_segment = [&](const TokenSeq& seg, int tag) {
    for (std::size_t i = 0; i < seg.size(); ++i) {
      flat.ids.push_back(seg[i]);
      flat.positions.push_back(static_cast<int>(i));
      flat.segments.push_back(tag);
    }
  };
  add_segment(stage.refs, kSegRef);
  add_segment(stage.aspect, kSegAspect);
  add_segment(stage.body, kSegBody);
  return flat;
}

MaskDeleteResult apply_mask_delete(const TokenSeq& body,
                                   const std::vector<int>& mask_positions) {
  const int n = static_cast<int>(body.size());
  for (std::size_t i = 0; i < mask_positions.size(); ++i) {
    const int p = mask_positions[i];
    if (p <= 0 || p >= n - 1) {
      throw DataError("mask position " + std::to_string(p) +
                      " outside body interior");
    }
    if (i > 0 && mask_positions[i - 1] >= p) {
      throw DataError("mask positions must be strictly ascending");
    }
  }

  MaskDeleteResult res;
  res.masked_positions = mask_positions;
  res.intermediate = body;
  std::vector<bool> masked(static_cast<std::size_t>(n), false);
  for (int p : mask_positions) {
    res.intermediate[static_cast<std::size_t>(p)] = Vocab::kMask;
    masked[static_cast<std::size_t>(p)] = true;
  }
  for (int i = 0; i < n; ++i) {
    if (masked[static_cast<std::size_t>(i)]) {
      // body[0] is BOS and never masked, so counts is non-empty here.
      ++res.counts.back();
    } else {
      res.prev_body.push_back(body[static_cast<std::size_t>(i)]);
      res.counts.push_back(0);
    }
  }
  return res;
}

namespace {

std::vector<int> deletable_positions(const TokenSeq& body,
                                     const std::vector<Span>& protected_spans) {
  std::vector<int> out;
  const int n = static_cast<int>(body.size());
  for (int i = 1; i + 1 < n; ++i) {
    bool protected_tok = false;
    for (const auto& s : protected_spans) {
      if (s.contains(i)) {
        protected_tok = true;
        break;
      }
    }
    if (!protected_tok) out.push_back(i);
  }
  return out;
}

}  // namespace

MaskDeleteResult mask_and_delete(const TokenSeq& body, double p,
                                 const std::vector<Span>& protected_spans,
                                 Rng& rng) {
  if (p <= 0.0 || p >= 1.0) {
    throw UsageError("mask probability must lie in (0, 1)");
  }
  if (body.size() < 2 || body.front() != Vocab::kBos ||
      body.back() != Vocab::kEos) {
    throw DataError("stage body must be delimited by BOS and EOS");
  }
  const std::vector<int> deletable = deletable_positions(body, protected_spans);
  const int n = static_cast<int>(deletable.size());
  if (n == 0) return apply_mask_delete(body, {});

  int n_mask = static_cast<int>(std::llround(p * n));
  n_mask = std::max(1, std::min(n_mask, n));
  const std::vector<int> picked = rng.sample_without_replacement(n, n_mask);
  std::vector<int> positions;
  positions.reserve(picked.size());
  for (int idx : picked) {
    positions.push_back(deletable[static_cast<std::size_t>(idx)]);
  }
  return apply_mask_delete(body, positions);
}

std::vector<ChainPair> build_chain(const TokenSeq& body, double p,
                                   const std::vector<Span>& constraints,
                                   Rng& rng) {
  const int n = static_cast<int>(body.size());
  for (const auto& s : constraints) {
    if (s.begin < 1 || s.end > n - 1 || s.begin >= s.end) {
      throw DataError("constraint span out of body range");
    }
    for (const auto& o : constraints) {
      if (&s != &o && s.overlaps(o)) {
        throw DataError("constraint spans overlap");
      }
    }
  }

  TokenSeq current = body;
  std::vector<Span> spans = constraints;
  std::vector<ChainPair> reversed;
  while (!deletable_positions(current, spans).empty()) {
    MaskDeleteResult res = mask_and_delete(current, p, spans, rng);
    reversed.push_back(ChainPair{res.prev_body, res.intermediate, res.counts,
                                 current});
    // Remap protected spans past the deleted positions. Protected tokens
    // are never masked, so each span stays contiguous.
    for (auto& s : spans) {
      const auto before_begin = std::count_if(
          res.masked_positions.begin(), res.masked_positions.end(),
          [&](int m) { return m < s.begin; });
      s.begin -= static_cast<int>(before_begin);
      s.end -= static_cast<int>(before_begin);
    }
    current = res.prev_body;
  }
  std::reverse(reversed.begin(), reversed.end());
  return reversed;
}

TrainingInstance personalize(const ChainPair& pair, const TokenSeq& refs,
                             TokenId aspect_token) {
  TokenSeq aspect;
  if (aspect_token >= 0) aspect.push_back(aspect_token);

  TrainingInstance inst;
  inst.prev = Stage{refs, aspect, pair.prev_body};
  inst.intermediate = Stage{refs, aspect, pair.intermediate_body};
  inst.target = Stage{refs, aspect, pair.next_body};
  inst.corrupted_body = pair.intermediate_body;

  const int prefix = inst.prev.prefix_size();
  inst.insert_counts.assign(static_cast<std::size_t>(prefix), 0);
  inst.insert_counts.insert(inst.insert_counts.end(), pair.counts.begin(),
                            pair.counts.end());
  inst.token_loss_mask.assign(
      static_cast<std::size_t>(inst.intermediate.size()), 0);
  inst.count_loss_mask.assign(static_cast<std::size_t>(inst.prev.size()), 0);
  return inst;
}

std::pair<TokenSeq, std::vector<std::uint8_t>> corrupt_for_token_loss(
    const TokenSeq& intermediate_body, const TokenSeq& target_body,
    const Vocab& vocab, Rng& rng) {
  if (intermediate_body.size() != target_body.size()) {
    throw DataError("intermediate and target bodies differ in length");
  }
  TokenSeq corrupted = intermediate_body;
  std::vector<std::uint8_t> mask(intermediate_body.size(), 0);
  const int n_text = vocab.size() - vocab.byte_base();
  for (std::size_t i = 0; i < intermediate_body.size(); ++i) {
    if (intermediate_body[i] != Vocab::kMask) continue;
    mask[i] = 1;
    const double u = rng.uniform();
    if (u < 0.8) {
      // stays MASK
    } else if (u < 0.9) {
      corrupted[i] = target_body[i];
    } else {
      corrupted[i] =
          vocab.byte_base() +
          static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(n_text)));
    }
  }
  return {std::move(corrupted), std::move(mask)};
}

std::vector<std::uint8_t> mask_count_labels(
    const std::vector<std::int32_t>& counts, int prefix_len, double q,
    Rng& rng) {
  if (q < 0.0 || q > 1.0) throw UsageError("q must lie in [0, 1]");
  std::vector<std::uint8_t> mask(counts.size(), 0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (static_cast<int>(i) < prefix_len) continue;
    if (counts[i] > 0) {
      mask[i] = 1;
    } else {
      mask[i] = rng.uniform() < (1.0 - q) ? 1 : 0;
    }
  }
  return mask;
}

TokenSeq mask_insert(const std::vector<std::int32_t>& counts,
                     const TokenSeq& body) {
  if (counts.size() != body.size()) {
    throw DataError("insertion counts must align with tokens");
  }
  TokenSeq out;
  std::size_t total = body.size();
  for (std::int32_t c : counts) {
    if (c < 0) throw DataError("negative insertion count");
    total += static_cast<std::size_t>(c);
  }
  out.reserve(total);
  for (std::size_t i = 0; i < body.size(); ++i) {
    out.push_back(body[i]);
    for (std::int32_t k = 0; k < counts[i]; ++k) out.push_back(Vocab::kMask);
  }
  return out;
}

Stage mask_insert_stage(const std::vector<std::int32_t>& counts,
                        const Stage& prev) {
  if (static_cast<int>(counts.size()) != prev.size()) {
    throw DataError("insertion counts must align with stage tokens");
  }
  const int prefix = prev.prefix_size();
  for (int i = 0; i < prefix; ++i) {
    if (counts[static_cast<std::size_t>(i)] != 0) {
      throw DataError("insertions into references or aspect are not allowed");
    }
  }
  std::vector<std::int32_t> body_counts(counts.begin() + prefix, counts.end());
  return Stage{prev.refs, prev.aspect, mask_insert(body_counts, prev.body)};
}

namespace {

constexpr std::uint64_t kChainSalt = 0xC4A1;
constexpr std::uint64_t kNoiseSalt = 0x015E;
constexpr std::uint64_t kModeSalt = 0x30DE;

std::vector<Span> draw_random_spans(const TokenSeq& body, int max_spans,
                                    Rng& rng) {
  std::vector<Span> spans;
  const int interior = static_cast<int>(body.size()) - 2;
  if (interior <= 0 || max_spans <= 0) return spans;
  const int want = static_cast<int>(rng.below(
      static_cast<std::uint64_t>(max_spans) + 1));
  for (int s = 0; s < want; ++s) {
    for (int attempt = 0; attempt < 4; ++attempt) {
      const int len = 1 + static_cast<int>(rng.below(
                              std::min<std::uint64_t>(3, interior)));
      const int start =
          1 + static_cast<int>(rng.below(
                  static_cast<std::uint64_t>(interior - len + 1)));
      const Span cand{start, start + len};
      bool overlap = false;
      for (const auto& sp : spans) overlap = overlap || cand.overlaps(sp);
      if (!overlap) {
        spans.push_back(cand);
        break;
      }
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });
  return spans;
}

}  // namespace

std::vector<TrainingInstance> build_example_instances(
    const SourceExample& source, const Vocab& vocab, const BuildParams& params,
    int epoch, bool* aspect_mode_out) {
  const std::uint64_t base = mix_seed(params.seed, source.id);
  const int chain_epoch = params.resample_chains ? epoch : 0;
  Rng chain_rng(mix_seed(mix_seed(base, kChainSalt),
                         static_cast<std::uint64_t>(chain_epoch)));
  Rng noise_rng(mix_seed(mix_seed(base, kNoiseSalt),
                         static_cast<std::uint64_t>(epoch)));

  TokenSeq refs;
  TokenId aspect_token = -1;
  std::vector<Span> spans;
  bool aspect_mode = false;
  if (params.finetune) {
    // The aspect-vs-lexical draw follows the chain epoch so fixed chains
    // keep a fixed mode.
    Rng mode_rng(mix_seed(mix_seed(base, kModeSalt),
                          static_cast<std::uint64_t>(chain_epoch)));
    aspect_mode = mode_rng.bernoulli(params.p_aspect);
    refs = source.refs;
    if (aspect_mode) {
      aspect_token = source.aspect_token >= 0
                         ? source.aspect_token
                         : vocab.aspect_token(vocab.pad_aspect_index());
    } else {
      aspect_token = vocab.aspect_token(vocab.pad_aspect_index());
      spans = source.constraints;
    }
  } else {
    spans = draw_random_spans(source.body, params.max_random_spans, chain_rng);
  }
  if (aspect_mode_out != nullptr) *aspect_mode_out = aspect_mode;

  std::vector<ChainPair> chain =
      build_chain(source.body, params.p, spans, chain_rng);
  if (params.add_stop_instance) {
    chain.push_back(ChainPair{
        source.body, source.body,
        std::vector<std::int32_t>(source.body.size(), 0), source.body});
  }

  std::vector<TrainingInstance> instances;
  instances.reserve(chain.size());
  for (const auto& pair : chain) {
    TrainingInstance inst = personalize(pair, refs, aspect_token);
    inst.example_id = source.id;
    inst.aspect_mode = aspect_mode;
    const int prefix = inst.prev.prefix_size();

    auto [corrupted, body_mask] = corrupt_for_token_loss(
        pair.intermediate_body, pair.next_body, vocab, noise_rng);
    inst.corrupted_body = std::move(corrupted);
    std::fill(inst.token_loss_mask.begin(), inst.token_loss_mask.end(), 0);
    std::copy(body_mask.begin(), body_mask.end(),
              inst.token_loss_mask.begin() + prefix);
    inst.count_loss_mask =
        mask_count_labels(inst.insert_counts, prefix, params.q, noise_rng);
    instances.push_back(std::move(inst));
  }
  return instances;
}

std::vector<TrainingInstance> build_epoch_instances(
    const std::vector<SourceExample>& sources, const Vocab& vocab,
    const BuildParams& params, int epoch) {
  std::vector<TrainingInstance> out;
  for (const auto& src : sources) {
    auto insts = build_example_instances(src, vocab, params, epoch);
    out.insert(out.end(), std::make_move_iterator(insts.begin()),
               std::make_move_iterator(insts.end()));
  }
  return out;
}

// ---------------------------------------------------------------------

namespace {

constexpr std::uint32_t kInstancesMagic = 0x49584C49;  // "ILXI"
constexpr std::uint32_t kSourcesMagic = 0x53584C49;    // "ILXS"
constexpr std::uint32_t kFormatVersion = 1;

void write_instance(std::ostream& out, const TrainingInstance& inst) {
  std::ostringstream payload;
  binio::put<std::uint64_t>(payload, inst.example_id);
  binio::put<std::uint8_t>(payload, inst.aspect_mode ? 1 : 0);
  binio::put_vec(payload, inst.prev.refs);
  binio::put_vec(payload, inst.prev.aspect);
  binio::put_vec(payload, inst.prev.body);
  binio::put_vec(payload, inst.intermediate.body);
  binio::put_vec(payload, inst.corrupted_body);
  binio::put_vec(payload, inst.target.body);
  binio::put_vec(payload, inst.insert_counts);
  binio::put_vec(payload, inst.token_loss_mask);
  binio::put_vec(payload, inst.count_loss_mask);
  const std::string bytes = payload.str();
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bytes.size()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainingInstance read_instance(std::istream& in) {
  const auto len = binio::get<std::uint32_t>(in, "instance record length");
  std::string bytes(len, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated instance record");
  std::istringstream payload(bytes);

  TrainingInstance inst;
  inst.example_id = binio::get<std::uint64_t>(payload, "example id");
  inst.aspect_mode = binio::get<std::uint8_t>(payload, "mode flag") != 0;
  const TokenSeq refs = binio::get_vec<TokenId>(payload, "refs");
  const TokenSeq aspect = binio::get_vec<TokenId>(payload, "aspect");
  const TokenSeq prev_body = binio::get_vec<TokenId>(payload, "prev body");
  const TokenSeq inter_body =
      binio::get_vec<TokenId>(payload, "intermediate body");
  inst.corrupted_body = binio::get_vec<TokenId>(payload, "corrupted body");
  const TokenSeq target_body = binio::get_vec<TokenId>(payload, "target body");
  inst.insert_counts = binio::get_vec<std::int32_t>(payload, "counts");
  inst.token_loss_mask = binio::get_vec<std::uint8_t>(payload, "token mask");
  inst.count_loss_mask = binio::get_vec<std::uint8_t>(payload, "count mask");
  inst.prev = Stage{refs, aspect, prev_body};
  inst.intermediate = Stage{refs, aspect, inter_body};
  inst.target = Stage{refs, aspect, target_body};
  if (inst.insert_counts.size() != static_cast<std::size_t>(inst.prev.size()) ||
      inst.token_loss_mask.size() !=
          static_cast<std::size_t>(inst.intermediate.size()) ||
      inst.count_loss_mask.size() !=
          static_cast<std::size_t>(inst.prev.size()) ||
      inst.corrupted_body.size() != inter_body.size()) {
    throw DataError("inconsistent instance record");
  }
  return inst;
}

}  // namespace

void write_instances(std::ostream& out,
                     const std::vector<TrainingInstance>& instances) {
  binio::put<std::uint32_t>(out, kInstancesMagic);
  binio::put<std::uint32_t>(out, kFormatVersion);
  binio::put<std::uint64_t>(out, instances.size());
  for (const auto& inst : instances) write_instance(out, inst);
}

std::vector<TrainingInstance> read_instances(std::istream& in) {
  if (binio::get<std::uint32_t>(in, "magic") != kInstancesMagic) {
    throw DataError("not an instance file");
  }
  if (binio::get<std::uint32_t>(in, "version") != kFormatVersion) {
    throw LineageError("unsupported instance file version");
  }
  const auto n = binio::get<std::uint64_t>(in, "record count");
  std::vector<TrainingInstance> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(read_instance(in));
  return out;
}

void write_instances_file(const std::string& path,
                          const std::vector<TrainingInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write instances: " + path);
  write_instances(out, instances);
  if (!out) throw DataError("failed writing instances: " + path);
}

std::vector<TrainingInstance> read_instances_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read instances: " + path);
  return read_instances(in);
}

void write_sources_file(const std::string& path,
                        const std::vector<SourceExample>& sources) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write sources: " + path);
  binio::put<std::uint32_t>(out, kSourcesMagic);
  binio::put<std::uint32_t>(out, kFormatVersion);
  binio::put<std::uint64_t>(out, sources.size());
  for (const auto& src : sources) {
    binio::put<std::uint64_t>(out, src.id);
    binio::put_vec(out, src.body);
    binio::put<std::uint32_t>(out,
                              static_cast<std::uint32_t>(src.constraints.size()));
    for (const auto& s : src.constraints) {
      binio::put<std::int32_t>(out, s.begin);
      binio::put<std::int32_t>(out, s.end);
    }
    binio::put_vec(out, src.refs);
    binio::put<std::int32_t>(out, src.aspect_token);
  }
  if (!out) throw DataError("failed writing sources: " + path);
}

std::vector<SourceExample> read_sources_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read sources: " + path);
  if (binio::get<std::uint32_t>(in, "magic") != kSourcesMagic) {
    throw DataError("not a source file: " + path);
  }
  if (binio::get<std::uint32_t>(in, "version") != kFormatVersion) {
    throw LineageError("unsupported source file version");
  }
  const auto n = binio::get<std::uint64_t>(in, "record count");
  std::vector<SourceExample> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    SourceExample src;
    src.id = binio::get<std::uint64_t>(in, "source id");
    src.body = binio::get_vec<TokenId>(in, "source body");
    const auto n_spans = binio::get<std::uint32_t>(in, "span count");
    for (std::uint32_t s = 0; s < n_spans; ++s) {
      Span sp;
      sp.begin = binio::get<std::int32_t>(in, "span begin");
      sp.end = binio::get<std::int32_t>(in, "span end");
      src.constraints.push_back(sp);
    }
    src.refs = binio::get_vec<TokenId>(in, "source refs");
    src.aspect_token = binio::get<std::int32_t>(in, "aspect token");
    out.push_back(std::move(src));
  }
  return out;
}

}  // namespace ilex
