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

#ifndef ILEX_TRAINER_HPP_
#define ILEX_TRAINER_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ilex/model.hpp"
#include "ilex/stage.hpp"

namespace ilex {

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 32;
  int epochs = 10;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  // Linear warmup to the constant rate; < 0 means 5% of total steps.
  int warmup_steps = -1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double count_term = 0.0;
  double token_term = 0.0;
  int count_active = 0;
  int token_active = 0;
};

// Joint objective over one instance: cross-entropy of insertion counts
// (labels clamped to d_ins-1) at count-mask positions plus cross-entropy
// of target tokens at token-mask positions, each averaged over its active
// positions. A term with no active positions contributes zero. When
// with_grad is set, gradients accumulate into the model.
template <typename Scalar>
LossBreakdown joint_loss(InsertionModel<Scalar>& model,
                         const TrainingInstance& instance, bool with_grad,
                         Rng* dropout_rng = nullptr);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double count_loss = 0.0;
  double token_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_dev_loss = 0.0;
};

// Training instances for a 0-based epoch index; called once per epoch.
using EpochDataFn = std::function<std::vector<TrainingInstance>(int)>;

struct TrainPaths {
  std::string log_path;        // metrics JSON Lines; empty disables
  std::string checkpoint_dir;  // best/last checkpoints; empty disables
  std::string vocab_hash;      // embedded in saved checkpoints
};

// Deterministic in (model, data, config): fixed shuffles, fixed reduction
// order, single writer. Keeps the best-dev checkpoint; with `resume`,
// continues from the persisted last-epoch state in checkpoint_dir and
// appends to the log.
TrainResult train(InsertionModel<float>& model, const EpochDataFn& train_data,
                  const std::vector<TrainingInstance>& dev,
                  const TrainConfig& cfg, const TrainPaths& paths = {},
                  bool resume = false);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int n_checked = 0;
};

// Central-difference verification of the analytic gradient on at least
// min_coords coordinates spanning every parameter tensor. Dropout is off
// on both sides.
GradCheckResult grad_check(InsertionModel<double>& model,
                           const TrainingInstance& instance, double epsilon,
                           int min_coords = 200);

}  // namespace ilex

#endif  // ILEX_TRAINER_HPP_
