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

#ifndef ILEX_MODEL_HPP_
#define ILEX_MODEL_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ilex/common.hpp"
#include "ilex/rng.hpp"
#include "ilex/stage.hpp"

namespace ilex {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int d_ins = 8;  // insertion-count classes 0 .. d_ins-1
  int vocab_size = 0;
  int max_segment_len = 128;
  int n_segments = 3;
  double dropout = 0.0;
  bool tie_embeddings = true;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // Structural equality; seed and dropout are run-time knobs.
  bool compatible_with(const ModelConfig& other) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::int64_t expected_param_count(const ModelConfig& cfg);

template <typename Scalar>
using RowMat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Tensor {
  std::string name;
  RowMat<Scalar> value;
  RowMat<Scalar> grad;
};

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> ln1_g, ln1_b;
  Tensor<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Scalar> ln2_g, ln2_b;
  Tensor<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct ModelParams {
  Tensor<Scalar> tok_emb, pos_emb, seg_emb;
  std::vector<LayerParams<Scalar>> layers;
  Tensor<Scalar> lnf_g, lnf_b;
  Tensor<Scalar> mi_w, mi_b;  // insertion-count head
  // Token-prediction head: linear, GeLU, layer norm, output projection.
  // The output weight is absent (0x0) when tied to the token embedding.
  Tensor<Scalar> tp_w1, tp_b1, tp_ln_g, tp_ln_b, tp_out_w, tp_out_b;
};

template <typename Scalar>
struct LayerCache {
  RowMat<Scalar> x_in;
  RowMat<Scalar> ln1_xhat, ln1_inv_std, a;
  RowMat<Scalar> q, k, v;
  std::vector<RowMat<Scalar>> attn;  // per-head softmax rows
  RowMat<Scalar> ctx;
  RowMat<Scalar> attn_drop, ffn_drop;  // empty when dropout is off
  RowMat<Scalar> x_mid;
  RowMat<Scalar> ln2_xhat, ln2_inv_std, f;
  RowMat<Scalar> h1, g;
};

template <typename Scalar>
struct ForwardCache {
  FlatStage flat;
  RowMat<Scalar> emb_drop;
  std::vector<LayerCache<Scalar>> layers;
  RowMat<Scalar> lnf_xhat, lnf_inv_std, y;
  // Token head intermediates.
  RowMat<Scalar> tp_h1, tp_g, tp_ln_xhat, tp_ln_inv_std, tp_n;
};

// Bidirectional transformer encoder with two heads: a linear insertion-count
// head applied to every token, and an MLP token-prediction head over the
// vocabulary. Pre-norm residual blocks with a final layer norm; token,
// per-segment position, and segment-tag embeddings are summed at the input.
template <typename Scalar>
class InsertionModel {
 public:
  using Mat = RowMat<Scalar>;

  explicit InsertionModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Count logits, one row of d_ins per stage token. A non-null dropout
  // rng enables training-mode dropout; inference is deterministic.
  Mat forward_counts(const Stage& stage, ForwardCache<Scalar>* cache = nullptr,
                     Rng* dropout = nullptr) const;
  // Vocabulary logits, one row per stage token.
  Mat forward_tokens(const Stage& stage, ForwardCache<Scalar>* cache = nullptr,
                     Rng* dropout = nullptr) const;

  // Accumulate parameter gradients for d(loss)/d(logits).
  void backward_counts(const Mat& dlogits, const ForwardCache<Scalar>& cache);
  void backward_tokens(const Mat& dlogits, const ForwardCache<Scalar>& cache);

  void zero_grads();
  std::vector<Tensor<Scalar>*> tensors();
  std::vector<const Tensor<Scalar>*> tensors() const;
  std::int64_t param_count() const;

  // Versioned binary container: header (magic, version, config JSON,
  // vocab hash), named float32 tensors with explicit shapes, checksum.
  void save(const std::string& path, const std::string& vocab_hash) const;
  struct Loaded {
    InsertionModel model;
    std::string vocab_hash;
  };
  static Loaded load(
      const std::string& path,
      const std::optional<std::string>& expected_vocab_hash = std::nullopt,
      const ModelConfig* expected_structure = nullptr);

  template <typename Other>
  static InsertionModel cast_from(const InsertionModel<Other>& other) {
    InsertionModel m(other.config(), false);
    auto dst = m.tensors();
    auto src = other.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i]->value = src[i]->value.template cast<Scalar>();
    }
    return m;
  }

  ModelParams<Scalar>& params() { return params_; }
  const ModelParams<Scalar>& params() const { return params_; }

 private:
  InsertionModel(const ModelConfig& cfg, bool init_weights);

  Mat encode(const FlatStage& flat, ForwardCache<Scalar>* cache,
             Rng* dropout) const;
  void backward_encoder(Mat dy, const ForwardCache<Scalar>& cache);

  ModelConfig cfg_;
  ModelParams<Scalar> params_;

  template <typename>
  friend class InsertionModel;
};

using ModelF = InsertionModel<float>;
using ModelD = InsertionModel<double>;

}  // namespace ilex

#endif  // ILEX_MODEL_HPP_
