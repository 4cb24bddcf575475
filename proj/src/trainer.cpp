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

#include "ilex/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ilex/binio.hpp"
#include "json.hpp"

namespace ilex {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw UsageError("learning_rate must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (grad_clip_norm <= 0.0) throw UsageError("grad_clip_norm must be > 0");
}

namespace {

// Stable log-softmax cross entropy for one logits row; loss in double.
template <typename Scalar>
double row_cross_entropy(const RowMat<Scalar>& logits, Eigen::Index row,
                         int label, std::vector<double>* softmax_out) {
  const Eigen::Index n = logits.cols();
  double maxv = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    maxv = std::max(maxv, static_cast<double>(logits(row, j)));
  }
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    sum += std::exp(static_cast<double>(logits(row, j)) - maxv);
  }
  const double lse = maxv + std::log(sum);
  if (softmax_out != nullptr) {
    softmax_out->resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      (*softmax_out)[static_cast<std::size_t>(j)] =
          std::exp(static_cast<double>(logits(row, j)) - lse);
    }
  }
  return lse - static_cast<double>(logits(row, label));
}

}  // namespace

template <typename Scalar>
LossBreakdown joint_loss(InsertionModel<Scalar>& model,
                         const TrainingInstance& inst, bool with_grad,
                         Rng* dropout_rng) {
  using Mat = RowMat<Scalar>;
  LossBreakdown out;
  const int d_ins = model.config().d_ins;

  // Mask-insertion term over the previous stage.
  {
    std::vector<Eigen::Index> active;
    for (std::size_t i = 0; i < inst.count_loss_mask.size(); ++i) {
      if (inst.count_loss_mask[i]) active.push_back(static_cast<Eigen::Index>(i));
    }
    out.count_active = static_cast<int>(active.size());
    if (!active.empty()) {
      ForwardCache<Scalar> cache;
      const Mat logits = model.forward_counts(
          inst.prev, with_grad ? &cache : nullptr, dropout_rng);
      Mat dlogits;
      if (with_grad) dlogits = Mat::Zero(logits.rows(), logits.cols());
      double sum = 0.0;
      std::vector<double> sm;
      for (Eigen::Index row : active) {
        const int label = std::min<int>(
            inst.insert_counts[static_cast<std::size_t>(row)], d_ins - 1);
        sum += row_cross_entropy(logits, row, label,
                                 with_grad ? &sm : nullptr);
        if (with_grad) {
          for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            dlogits(row, j) = static_cast<Scalar>(
                sm[static_cast<std::size_t>(j)] / active.size());
          }
          dlogits(row, label) -=
              static_cast<Scalar>(1.0 / static_cast<double>(active.size()));
        }
      }
      out.count_term = sum / static_cast<double>(active.size());
      if (with_grad) model.backward_counts(dlogits, cache);
    }
  }

  // Token-prediction term over the corrupted intermediate stage.
  {
    std::vector<Eigen::Index> active;
    for (std::size_t i = 0; i < inst.token_loss_mask.size(); ++i) {
      if (inst.token_loss_mask[i]) active.push_back(static_cast<Eigen::Index>(i));
    }
    out.token_active = static_cast<int>(active.size());
    if (!active.empty()) {
      const Stage input = inst.corrupted_stage();
      const FlatStage target_flat = flatten(inst.target);
      ForwardCache<Scalar> cache;
      const Mat logits =
          model.forward_tokens(input, with_grad ? &cache : nullptr, dropout_rng);
      Mat dlogits;
      if (with_grad) dlogits = Mat::Zero(logits.rows(), logits.cols());
      double sum = 0.0;
      std::vector<double> sm;
      for (Eigen::Index row : active) {
        const int label = target_flat.ids[static_cast<std::size_t>(row)];
        sum += row_cross_entropy(logits, row, label,
                                 with_grad ? &sm : nullptr);
        if (with_grad) {
          for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            dlogits(row, j) = static_cast<Scalar>(
                sm[static_cast<std::size_t>(j)] / active.size());
          }
          dlogits(row, label) -=
              static_cast<Scalar>(1.0 / static_cast<double>(active.size()));
        }
      }
      out.token_term = sum / static_cast<double>(active.size());
      if (with_grad) model.backward_tokens(dlogits, cache);
    }
  }

  out.total = out.count_term + out.token_term;
  return out;
}

template LossBreakdown joint_loss<float>(InsertionModel<float>&,
                                         const TrainingInstance&, bool, Rng*);
template LossBreakdown joint_loss<double>(InsertionModel<double>&,
                                          const TrainingInstance&, bool, Rng*);

// ---------------------------------------------------------------------
// Optimizer and persisted trainer state.

namespace {

constexpr std::uint32_t kStateMagic = 0x54504C49;  // "ILPT"
constexpr std::uint32_t kStateVersion = 1;

class AdamW {
 public:
  AdamW(InsertionModel<float>& model, double weight_decay)
      : model_(model), weight_decay_(weight_decay) {
    for (auto* t : model_.tensors()) {
      m_.push_back(RowMat<float>::Zero(t->value.rows(), t->value.cols()));
      v_.push_back(RowMat<float>::Zero(t->value.rows(), t->value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t_));
    const auto ts = model_.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      auto& g = ts[i]->grad;
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = (b2 * v_[i].array() + (1.0f - b2) * g.array().square()).matrix();
      const auto mhat = m_[i].array() / bc1;
      const auto vhat = v_[i].array() / bc2;
      ts[i]->value.array() -=
          static_cast<float>(lr) *
          (mhat / (vhat.sqrt() + eps) +
           static_cast<float>(weight_decay_) * ts[i]->value.array());
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<RowMat<float>>& moments_m() { return m_; }
  std::vector<RowMat<float>>& moments_v() { return v_; }

 private:
  InsertionModel<float>& model_;
  double weight_decay_;
  std::int64_t t_ = 0;
  std::vector<RowMat<float>> m_;
  std::vector<RowMat<float>> v_;
};

struct TrainerState {
  int epochs_done = 0;
  int best_epoch = 0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::int64_t global_step = 0;
};

void put_mat(std::ostream& out, const RowMat<float>& m) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  if (m.size() > 0) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(float)));
  }
}

RowMat<float> get_mat(std::istream& in) {
  const auto rows = binio::get<std::uint32_t>(in, "state rows");
  const auto cols = binio::get<std::uint32_t>(in, "state cols");
  RowMat<float> m(rows, cols);
  if (m.size() > 0) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw DataError("truncated trainer state");
  }
  return m;
}

void save_state(const std::string& path, const TrainerState& st, AdamW& opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trainer state: " + path);
  binio::put<std::uint32_t>(out, kStateMagic);
  binio::put<std::uint32_t>(out, kStateVersion);
  binio::put<std::int32_t>(out, st.epochs_done);
  binio::put<std::int32_t>(out, st.best_epoch);
  binio::put<double>(out, st.best_dev_loss);
  binio::put<std::int64_t>(out, st.global_step);
  binio::put<std::int64_t>(out, opt.step_count());
  binio::put<std::uint32_t>(out,
                            static_cast<std::uint32_t>(opt.moments_m().size()));
  for (const auto& m : opt.moments_m()) put_mat(out, m);
  for (const auto& v : opt.moments_v()) put_mat(out, v);
}

TrainerState load_state(const std::string& path, AdamW& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read trainer state: " + path);
  if (binio::get<std::uint32_t>(in, "state magic") != kStateMagic) {
    throw DataError("not a trainer state file: " + path);
  }
  if (binio::get<std::uint32_t>(in, "state version") != kStateVersion) {
    throw LineageError("unsupported trainer state version");
  }
  TrainerState st;
  st.epochs_done = binio::get<std::int32_t>(in, "epochs done");
  st.best_epoch = binio::get<std::int32_t>(in, "best epoch");
  st.best_dev_loss = binio::get<double>(in, "best dev loss");
  st.global_step = binio::get<std::int64_t>(in, "global step");
  opt.set_step_count(binio::get<std::int64_t>(in, "optimizer step"));
  const auto n = binio::get<std::uint32_t>(in, "tensor count");
  if (n != opt.moments_m().size()) {
    throw DataError("trainer state tensor count mismatch");
  }
  for (auto& m : opt.moments_m()) m = get_mat(in);
  for (auto& v : opt.moments_v()) v = get_mat(in);
  return st;
}

constexpr std::uint64_t kShuffleSalt = 0x5f5f;
constexpr std::uint64_t kDropSalt = 0xd0d0;

}  // namespace

TrainResult train(InsertionModel<float>& model, const EpochDataFn& train_data,
                  const std::vector<TrainingInstance>& dev,
                  const TrainConfig& cfg, const TrainPaths& paths,
                  bool resume) {
  cfg.validate();
  AdamW opt(model, cfg.weight_decay);
  TrainerState st;

  const bool persist = !paths.checkpoint_dir.empty();
  const std::string last_path = paths.checkpoint_dir + "/last.ckpt";
  const std::string best_path = paths.checkpoint_dir + "/best.ckpt";
  const std::string state_path = paths.checkpoint_dir + "/trainer_state.bin";

  if (resume) {
    if (!persist) throw UsageError("resume requires a checkpoint directory");
    auto loaded = InsertionModel<float>::load(last_path);
    if (!loaded.model.config().compatible_with(model.config())) {
      throw LineageError("resume checkpoint is structurally incompatible");
    }
    model = std::move(loaded.model);
    st = load_state(state_path, opt);
  }

  // Warmup horizon from the first epoch's size; later epochs may differ
  // slightly when chains are re-drawn.
  const std::vector<TrainingInstance> first_epoch = train_data(st.epochs_done);
  if (first_epoch.empty()) throw DataError("no training instances");
  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(first_epoch.size()) + cfg.batch_size - 1) /
      cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const std::int64_t warmup =
      cfg.warmup_steps >= 0
          ? cfg.warmup_steps
          : std::max<std::int64_t>(1, (total_steps + 19) / 20);

  std::ofstream log;
  if (!paths.log_path.empty()) {
    log.open(paths.log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write metrics log: " + paths.log_path);
  }

  const bool dropout_on = model.config().dropout > 0.0;
  TrainResult result;
  result.best_epoch = st.best_epoch;
  result.best_dev_loss = st.best_dev_loss;

  for (int epoch = st.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<TrainingInstance> data =
        epoch == st.epochs_done ? first_epoch : train_data(epoch);
    if (data.empty()) throw DataError("no training instances");

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, kShuffleSalt),
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0, count_sum = 0.0, token_sum = 0.0;
    double lr_now = cfg.learning_rate;
    std::size_t cursor = 0;
    std::int64_t batch_index = 0;
    while (cursor < order.size()) {
      const std::size_t batch_n =
          std::min<std::size_t>(cfg.batch_size, order.size() - cursor);
      model.zero_grads();
      for (std::size_t b = 0; b < batch_n; ++b) {
        const TrainingInstance& inst = data[order[cursor + b]];
        Rng drop_rng(mix_seed(
            mix_seed(mix_seed(cfg.seed, kDropSalt),
                     static_cast<std::uint64_t>(epoch)),
            static_cast<std::uint64_t>(cursor + b)));
        const LossBreakdown lb =
            joint_loss(model, inst, true, dropout_on ? &drop_rng : nullptr);
        if (!std::isfinite(lb.total)) {
          throw DataError(
              "non-finite loss at epoch " + std::to_string(epoch + 1) +
              ", batch " + std::to_string(batch_index) +
              " (count=" + std::to_string(lb.count_term) +
              ", token=" + std::to_string(lb.token_term) + ")");
        }
        loss_sum += lb.total;
        count_sum += lb.count_term;
        token_sum += lb.token_term;
      }

      const float inv = 1.0f / static_cast<float>(batch_n);
      double norm_sq = 0.0;
      for (auto* t : model.tensors()) {
        t->grad *= inv;
        norm_sq += static_cast<double>(t->grad.squaredNorm());
      }
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg.grad_clip_norm) {
        const float scale = static_cast<float>(cfg.grad_clip_norm / norm);
        for (auto* t : model.tensors()) t->grad *= scale;
      }

      ++st.global_step;
      lr_now = cfg.learning_rate *
               std::min(1.0, static_cast<double>(st.global_step) /
                                 static_cast<double>(warmup));
      opt.step(lr_now);
      cursor += batch_n;
      ++batch_index;
    }

    double dev_loss = std::numeric_limits<double>::quiet_NaN();
    if (!dev.empty()) {
      double sum = 0.0;
      for (const auto& inst : dev) {
        sum += joint_loss(model, inst, false, nullptr).total;
      }
      dev_loss = sum / static_cast<double>(dev.size());
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = loss_sum / static_cast<double>(data.size());
    em.count_loss = count_sum / static_cast<double>(data.size());
    em.token_loss = token_sum / static_cast<double>(data.size());
    em.dev_loss = dev_loss;
    em.lr = lr_now;
    em.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(em);

    const double selection = dev.empty() ? em.train_loss : dev_loss;
    if (selection < st.best_dev_loss) {
      st.best_dev_loss = selection;
      st.best_epoch = em.epoch;
      if (persist) model.save(best_path, paths.vocab_hash);
    }
    st.epochs_done = epoch + 1;
    if (persist) {
      model.save(last_path, paths.vocab_hash);
      save_state(state_path, st, opt);
    }

    if (log.is_open()) {
      nlohmann::json j;
      j["epoch"] = em.epoch;
      j["train_loss"] = em.train_loss;
      j["dev_loss"] = std::isnan(em.dev_loss)
                          ? nlohmann::json(nullptr)
                          : nlohmann::json(em.dev_loss);
      j["count_loss"] = em.count_loss;
      j["token_loss"] = em.token_loss;
      j["lr"] = em.lr;
      j["wall_seconds"] = em.wall_seconds;
      log << j.dump() << "\n";
      log.flush();
    }
  }

  result.best_epoch = st.best_epoch;
  result.best_dev_loss = st.best_dev_loss;
  return result;
}

GradCheckResult grad_check(InsertionModel<double>& model,
                           const TrainingInstance& inst, double epsilon,
                           int min_coords) {
  if (epsilon <= 0.0) throw UsageError("epsilon must be positive");

  model.zero_grads();
  joint_loss(model, inst, true, nullptr);
  std::vector<RowMat<double>> analytic;
  for (auto* t : model.tensors()) analytic.push_back(t->grad);

  const auto ts = model.tensors();
  const int per_tensor = std::max<int>(
      1, (min_coords + static_cast<int>(ts.size()) - 1) /
             static_cast<int>(ts.size()));

  Rng rng(0x9d5e);
  GradCheckResult result;
  for (std::size_t ti = 0; ti < ts.size(); ++ti) {
    auto& value = ts[ti]->value;
    const Eigen::Index count = value.size();
    const int n_pick = static_cast<int>(
        std::min<Eigen::Index>(per_tensor, count));
    for (int k = 0; k < n_pick; ++k) {
      const auto flat =
          static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(count)));
      const Eigen::Index i = flat / value.cols();
      const Eigen::Index j = flat % value.cols();
      const double saved = value(i, j);
      value(i, j) = saved + epsilon;
      const double up = joint_loss(model, inst, false, nullptr).total;
      value(i, j) = saved - epsilon;
      const double down = joint_loss(model, inst, false, nullptr).total;
      value(i, j) = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[ti](i, j);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_rel_error =
          std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.n_checked;
    }
  }
  return result;
}

}  // namespace ilex
