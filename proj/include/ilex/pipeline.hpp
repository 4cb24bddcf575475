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

#ifndef ILEX_PIPELINE_HPP_
#define ILEX_PIPELINE_HPP_

#include <optional>
#include <string>
#include <vector>

#include "ilex/corpus.hpp"
#include "ilex/generator.hpp"
#include "ilex/metrics.hpp"
#include "ilex/model.hpp"
#include "ilex/stage.hpp"
#include "ilex/tokenizer.hpp"
#include "ilex/trainer.hpp"

namespace ilex {

// Flat key=value experiment configuration. Every key can come from a
// config file and be overridden by a command-line flag.
struct ExperimentConfig {
  // Paths.
  std::string corpus;
  std::string table;
  std::string workdir = ".";
  // Tokenizer.
  int vocab_size = 4096;
  int n_aspects = 8;
  // Corpus preparation.
  int max_words = 64;
  int n_refs = 3;
  double dev_fraction = 0.05;
  // Stage construction.
  double p = 0.2;
  double q = 0.9;
  double p_aspect = 0.25;
  int d_ins = 8;
  std::uint64_t seed = 1;
  bool resample_chains = true;
  // Model.
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 256;
  int max_segment_len = 128;
  double dropout = 0.1;
  bool tie_embeddings = true;
  // Training.
  double pretrain_lr = 5e-5;
  int pretrain_batch = 512;
  int pretrain_epochs = 1;
  double finetune_lr = 3e-5;
  int finetune_batch = 128;
  int finetune_epochs = 10;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int warmup_steps = -1;
  // Generation.
  std::string decode = "greedy";
  int top_k = 10;
  double temperature = 1.0;
  int max_stages = 10;
  int max_body_len = 96;

  void set(const std::string& key, const std::string& value);
  static ExperimentConfig from_file(const std::string& path);
  std::string canonical() const;
  std::string hash() const;

  ModelConfig model_config(int actual_vocab_size) const;
  GenerationConfig generation_config() const;
  TrainConfig train_config(bool finetune) const;
};

struct WorkdirLayout {
  std::string vocab_file;
  std::string prepared_dir;
  std::string checkpoints_dir;
  std::string reports_dir;
};
WorkdirLayout workdir_layout(const std::string& workdir);

// --- Subcommand entry points -----------------------------------------

struct BuildVocabResult {
  int vocab_size = 0;
  std::string vocab_hash;
};
BuildVocabResult run_build_vocab(const ExperimentConfig& cfg,
                                 const std::string& corpus_path, bool jsonl,
                                 const std::string& out_path);

enum class Phase { kPretrain, kFinetune };

struct PrepareResult {
  std::size_t n_train_sources = 0;
  std::size_t n_dev_sources = 0;
  std::size_t n_test_examples = 0;
  std::size_t n_train_instances = 0;
  std::size_t dropped = 0;
};
PrepareResult run_prepare(const ExperimentConfig& cfg, Phase phase,
                          const std::string& corpus_path,
                          const std::string& vocab_path,
                          const std::optional<std::string>& table_path,
                          const std::string& out_dir);

struct TrainRunResult {
  TrainResult train;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_log;
};
TrainRunResult run_train_phase(const ExperimentConfig& cfg, Phase phase,
                               const std::string& data_dir,
                               const std::string& vocab_path,
                               const std::optional<std::string>& init_ckpt,
                               const std::string& out_dir, bool resume);

// Generates under both modes for every example of the split and scores
// all metrics per mode; refuses mismatched lineages.
std::string run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                     const std::string& split, const std::string& data_dir,
                     const std::string& vocab_path,
                     const std::optional<std::string>& table_path,
                     const std::string& out_path,
                     const std::optional<std::string>& per_pair_csv);

// Reference tokenization shared by preparation and evaluation: oldest
// reference first (user block then item block), left-truncated to the
// segment budget.
TokenSeq tokenize_refs(const ExplanationExample& example, const Vocab& vocab,
                       int max_segment_len);

void write_examples_jsonl(const std::string& path,
                          const std::vector<ExplanationExample>& examples);
std::vector<ExplanationExample> read_examples_jsonl(const std::string& path);

// True when `text` contains all phrases contiguously (case-normalized)
// and in the given relative order.
bool satisfies_constraints(const std::string& text,
                           const std::vector<std::string>& phrases);

}  // namespace ilex

#endif  // ILEX_PIPELINE_HPP_
