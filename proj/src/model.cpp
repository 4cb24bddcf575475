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

#include "ilex/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ilex/binio.hpp"
#include "json.hpp"

namespace ilex {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1) {
    throw UsageError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw UsageError("d_model must be divisible by n_heads");
  }
  if (d_ins < 2) throw UsageError("d_ins must be at least 2");
  if (vocab_size < 1) throw UsageError("vocab_size must be set");
  if (max_segment_len < 2) throw UsageError("max_segment_len too small");
  if (n_segments != 3) throw UsageError("n_segments must be 3");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw UsageError("dropout must lie in [0, 1)");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_model"] = d_model;
  j["d_ff"] = d_ff;
  j["d_ins"] = d_ins;
  j["vocab_size"] = vocab_size;
  j["max_segment_len"] = max_segment_len;
  j["n_segments"] = n_segments;
  j["dropout"] = dropout;
  j["tie_embeddings"] = tie_embeddings;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid model config: ") + e.what());
  }
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.d_ins = j.at("d_ins").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_segment_len = j.at("max_segment_len").get<int>();
  cfg.n_segments = j.at("n_segments").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

bool ModelConfig::compatible_with(const ModelConfig& other) const {
  return n_layers == other.n_layers && n_heads == other.n_heads &&
         d_model == other.d_model && d_ff == other.d_ff &&
         d_ins == other.d_ins && vocab_size == other.vocab_size &&
         max_segment_len == other.max_segment_len &&
         n_segments == other.n_segments &&
         tie_embeddings == other.tie_embeddings;
}

std::int64_t expected_param_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t f = cfg.d_ff;
  const std::int64_t v = cfg.vocab_size;
  std::int64_t total = v * d + cfg.max_segment_len * d + cfg.n_segments * d;
  const std::int64_t per_layer = 2 * d            // ln1
                                 + 4 * d * d + 4 * d  // q k v o
                                 + 2 * d            // ln2
                                 + d * f + f + f * d + d;
  total += cfg.n_layers * per_layer;
  total += 2 * d;                       // final layer norm
  total += d * cfg.d_ins + cfg.d_ins;   // count head
  total += d * d + d + 2 * d + v;       // token head incl. output bias
  if (!cfg.tie_embeddings) total += d * v;
  return total;
}

namespace {

template <typename S>
S gelu_scalar(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S phi_cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
  const S phi_pdf = std::exp(S(-0.5) * x * x) * S(0.3989422804014327);
  return phi_cdf + x * phi_pdf;
}

template <typename S>
RowMat<S> gelu(const RowMat<S>& x) {
  return x.unaryExpr([](S v) { return gelu_scalar(v); });
}

template <typename S>
RowMat<S> gelu_grad(const RowMat<S>& x) {
  return x.unaryExpr([](S v) { return gelu_grad_scalar(v); });
}

constexpr double kLnEps = 1e-5;

template <typename S>
void layer_norm_fwd(const RowMat<S>& x, const Tensor<S>& g, const Tensor<S>& b,
                    RowMat<S>* out, RowMat<S>* xhat, RowMat<S>* inv_std) {
  const Eigen::Index L = x.rows(), d = x.cols();
  xhat->resize(L, d);
  inv_std->resize(L, 1);
  out->resize(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    const S mu = x.row(i).mean();
    const S var = (x.row(i).array() - mu).square().sum() / S(d);
    const S is = S(1) / std::sqrt(var + S(kLnEps));
    (*inv_std)(i, 0) = is;
    xhat->row(i) = ((x.row(i).array() - mu) * is).matrix();
    out->row(i) = (xhat->row(i).array() * g.value.row(0).array()).matrix() +
                  b.value.row(0);
  }
}

template <typename S>
RowMat<S> layer_norm_bwd(const RowMat<S>& dout, const RowMat<S>& xhat,
                         const RowMat<S>& inv_std, Tensor<S>& g,
                         Tensor<S>& b) {
  const Eigen::Index L = dout.rows(), d = dout.cols();
  RowMat<S> dx(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    g.grad.row(0) +=
        (dout.row(i).array() * xhat.row(i).array()).matrix();
    b.grad.row(0) += dout.row(i);
    const RowMat<S> dxhat =
        (dout.row(i).array() * g.value.row(0).array()).matrix();
    const S sum_dxhat = dxhat.sum();
    const S sum_dxhat_xhat = (dxhat.array() * xhat.row(i).array()).sum();
    dx.row(i) = ((inv_std(i, 0) / S(d)) *
                 (S(d) * dxhat.array() - sum_dxhat -
                  xhat.row(i).array() * sum_dxhat_xhat))
                    .matrix();
  }
  return dx;
}

template <typename S>
RowMat<S> softmax_rows(const RowMat<S>& x) {
  RowMat<S> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename S>
RowMat<S> make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p,
                            Rng& rng) {
  RowMat<S> m(rows, cols);
  const S keep = S(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = rng.bernoulli(1.0 - p) ? keep : S(0);
    }
  }
  return m;
}

}  // namespace

template <typename Scalar>
InsertionModel<Scalar>::InsertionModel(const ModelConfig& cfg)
    : InsertionModel(cfg, true) {}

template <typename Scalar>
InsertionModel<Scalar>::InsertionModel(const ModelConfig& cfg,
                                       bool init_weights)
    : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<Eigen::Index>(cfg_.d_model);
  const auto f = static_cast<Eigen::Index>(cfg_.d_ff);
  const auto v = static_cast<Eigen::Index>(cfg_.vocab_size);
  const auto c = static_cast<Eigen::Index>(cfg_.d_ins);

  auto shape = [](Tensor<Scalar>& t, const std::string& name,
                  Eigen::Index rows, Eigen::Index cols) {
    t.name = name;
    t.value.setZero(rows, cols);
    t.grad.setZero(rows, cols);
  };

  shape(params_.tok_emb, "tok_emb", v, d);
  shape(params_.pos_emb, "pos_emb", cfg_.max_segment_len, d);
  shape(params_.seg_emb, "seg_emb", cfg_.n_segments, d);
  params_.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& lay = params_.layers[static_cast<std::size_t>(l)];
    const std::string pre = "layer" + std::to_string(l) + ".";
    shape(lay.ln1_g, pre + "ln1_g", 1, d);
    shape(lay.ln1_b, pre + "ln1_b", 1, d);
    shape(lay.wq, pre + "wq", d, d);
    shape(lay.bq, pre + "bq", 1, d);
    shape(lay.wk, pre + "wk", d, d);
    shape(lay.bk, pre + "bk", 1, d);
    shape(lay.wv, pre + "wv", d, d);
    shape(lay.bv, pre + "bv", 1, d);
    shape(lay.wo, pre + "wo", d, d);
    shape(lay.bo, pre + "bo", 1, d);
    shape(lay.ln2_g, pre + "ln2_g", 1, d);
    shape(lay.ln2_b, pre + "ln2_b", 1, d);
    shape(lay.w1, pre + "w1", d, f);
    shape(lay.b1, pre + "b1", 1, f);
    shape(lay.w2, pre + "w2", f, d);
    shape(lay.b2, pre + "b2", 1, d);
  }
  shape(params_.lnf_g, "final.ln_g", 1, d);
  shape(params_.lnf_b, "final.ln_b", 1, d);
  shape(params_.mi_w, "mi.w", d, c);
  shape(params_.mi_b, "mi.b", 1, c);
  shape(params_.tp_w1, "tp.w1", d, d);
  shape(params_.tp_b1, "tp.b1", 1, d);
  shape(params_.tp_ln_g, "tp.ln_g", 1, d);
  shape(params_.tp_ln_b, "tp.ln_b", 1, d);
  if (!cfg_.tie_embeddings) shape(params_.tp_out_w, "tp.out_w", d, v);
  shape(params_.tp_out_b, "tp.out_b", 1, v);

  if (!init_weights) return;

  // Scaled-normal init: weights and embeddings N(0, 0.02^2); biases zero;
  // layer-norm gains one. Classified from the tensor name tail: *_g gains,
  // b* and *_b biases, everything else a weight.
  Rng rng(cfg_.seed);
  const double kStd = 0.02;
  for (Tensor<Scalar>* t : tensors()) {
    const std::string tail = t->name.substr(t->name.rfind('.') + 1);
    if (tail.ends_with("_g")) {
      t->value.setOnes();
    } else if (tail.starts_with("b") || tail.ends_with("_b")) {
      t->value.setZero();
    } else {
      for (Eigen::Index i = 0; i < t->value.rows(); ++i) {
        for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
          t->value(i, j) = static_cast<Scalar>(rng.normal() * kStd);
        }
      }
    }
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> InsertionModel<Scalar>::tensors() {
  std::vector<Tensor<Scalar>*> out;
  out.push_back(&params_.tok_emb);
  out.push_back(&params_.pos_emb);
  out.push_back(&params_.seg_emb);
  for (auto& lay : params_.layers) {
    out.push_back(&lay.ln1_g);
    out.push_back(&lay.ln1_b);
    out.push_back(&lay.wq);
    out.push_back(&lay.bq);
    out.push_back(&lay.wk);
    out.push_back(&lay.bk);
    out.push_back(&lay.wv);
    out.push_back(&lay.bv);
    out.push_back(&lay.wo);
    out.push_back(&lay.bo);
    out.push_back(&lay.ln2_g);
    out.push_back(&lay.ln2_b);
    out.push_back(&lay.w1);
    out.push_back(&lay.b1);
    out.push_back(&lay.w2);
    out.push_back(&lay.b2);
  }
  out.push_back(&params_.lnf_g);
  out.push_back(&params_.lnf_b);
  out.push_back(&params_.mi_w);
  out.push_back(&params_.mi_b);
  out.push_back(&params_.tp_w1);
  out.push_back(&params_.tp_b1);
  out.push_back(&params_.tp_ln_g);
  out.push_back(&params_.tp_ln_b);
  if (!cfg_.tie_embeddings) out.push_back(&params_.tp_out_w);
  out.push_back(&params_.tp_out_b);
  return out;
}

template <typename Scalar>
std::vector<const Tensor<Scalar>*> InsertionModel<Scalar>::tensors() const {
  auto mut = const_cast<InsertionModel*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <typename Scalar>
std::int64_t InsertionModel<Scalar>::param_count() const {
  std::int64_t total = 0;
  for (const auto* t : tensors()) total += t->value.size();
  return total;
}

template <typename Scalar>
void InsertionModel<Scalar>::zero_grads() {
  for (auto* t : tensors()) t->grad.setZero();
}

template <typename Scalar>
typename InsertionModel<Scalar>::Mat InsertionModel<Scalar>::encode(
    const FlatStage& flat, ForwardCache<Scalar>* cache, Rng* dropout) const {
  const auto L = static_cast<Eigen::Index>(flat.ids.size());
  const auto d = static_cast<Eigen::Index>(cfg_.d_model);
  const int heads = cfg_.n_heads;
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  const bool use_dropout = dropout != nullptr && cfg_.dropout > 0.0;

  Mat x(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    x.row(i) = params_.tok_emb.value.row(flat.ids[idx]) +
               params_.pos_emb.value.row(flat.positions[idx]) +
               params_.seg_emb.value.row(flat.segments[idx]);
  }
  if (cache != nullptr) {
    cache->flat = flat;
    cache->emb_drop = Mat();
    cache->layers.assign(static_cast<std::size_t>(cfg_.n_layers), {});
  }
  if (use_dropout) {
    Mat m = make_dropout_mask<Scalar>(L, d, cfg_.dropout, *dropout);
    x = x.cwiseProduct(m);
    if (cache != nullptr) cache->emb_drop = std::move(m);
  }

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& lay = params_.layers[static_cast<std::size_t>(l)];
    LayerCache<Scalar> local;
    LayerCache<Scalar>& lc =
        cache != nullptr ? cache->layers[static_cast<std::size_t>(l)] : local;
    lc.x_in = x;

    layer_norm_fwd(x, lay.ln1_g, lay.ln1_b, &lc.a, &lc.ln1_xhat,
                   &lc.ln1_inv_std);
    lc.q = lc.a * lay.wq.value;
    lc.q.rowwise() += lay.bq.value.row(0);
    lc.k = lc.a * lay.wk.value;
    lc.k.rowwise() += lay.bk.value.row(0);
    lc.v = lc.a * lay.wv.value;
    lc.v.rowwise() += lay.bv.value.row(0);

    lc.attn.resize(static_cast<std::size_t>(heads));
    lc.ctx.resize(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      Mat scores = (qh * kh.transpose()) * scale;
      lc.attn[static_cast<std::size_t>(h)] = softmax_rows(scores);
      lc.ctx.middleCols(h * dh, dh) =
          lc.attn[static_cast<std::size_t>(h)] * vh;
    }
    Mat attn_out = lc.ctx * lay.wo.value;
    attn_out.rowwise() += lay.bo.value.row(0);
    if (use_dropout) {
      lc.attn_drop = make_dropout_mask<Scalar>(L, d, cfg_.dropout, *dropout);
      attn_out = attn_out.cwiseProduct(lc.attn_drop);
    }
    lc.x_mid = x + attn_out;

    layer_norm_fwd(lc.x_mid, lay.ln2_g, lay.ln2_b, &lc.f, &lc.ln2_xhat,
                   &lc.ln2_inv_std);
    lc.h1 = lc.f * lay.w1.value;
    lc.h1.rowwise() += lay.b1.value.row(0);
    lc.g = gelu(lc.h1);
    Mat ffn_out = lc.g * lay.w2.value;
    ffn_out.rowwise() += lay.b2.value.row(0);
    if (use_dropout) {
      lc.ffn_drop = make_dropout_mask<Scalar>(L, d, cfg_.dropout, *dropout);
      ffn_out = ffn_out.cwiseProduct(lc.ffn_drop);
    }
    x = lc.x_mid + ffn_out;
  }

  Mat y;
  if (cache != nullptr) {
    layer_norm_fwd(x, params_.lnf_g, params_.lnf_b, &cache->y,
                   &cache->lnf_xhat, &cache->lnf_inv_std);
    y = cache->y;
  } else {
    Mat xhat, inv_std;
    layer_norm_fwd(x, params_.lnf_g, params_.lnf_b, &y, &xhat, &inv_std);
  }
  return y;
}

namespace {

void check_stage(const Stage& stage, const ModelConfig& cfg) {
  auto check_segment = [&](const TokenSeq& seg, const char* name) {
    if (static_cast<int>(seg.size()) > cfg.max_segment_len) {
      throw DataError(std::string(name) + " segment length " +
                      std::to_string(seg.size()) + " exceeds max_segment_len " +
                      std::to_string(cfg.max_segment_len));
    }
    for (TokenId id : seg) {
      if (id < 0 || id >= cfg.vocab_size) {
        throw DataError("token id out of vocabulary range");
      }
    }
  };
  check_segment(stage.refs, "refs");
  check_segment(stage.aspect, "aspect");
  check_segment(stage.body, "body");
  if (stage.aspect.size() > 1) {
    throw DataError("aspect segment may hold at most one token");
  }
  if (stage.body.size() < 2) {
    throw DataError("stage body must contain BOS and EOS");
  }
}

}  // namespace

template <typename Scalar>
typename InsertionModel<Scalar>::Mat InsertionModel<Scalar>::forward_counts(
    const Stage& stage, ForwardCache<Scalar>* cache, Rng* dropout) const {
  check_stage(stage, cfg_);
  const Mat y = encode(flatten(stage), cache, dropout);
  Mat logits = y * params_.mi_w.value;
  logits.rowwise() += params_.mi_b.value.row(0);
  return logits;
}

template <typename Scalar>
typename InsertionModel<Scalar>::Mat InsertionModel<Scalar>::forward_tokens(
    const Stage& stage, ForwardCache<Scalar>* cache, Rng* dropout) const {
  check_stage(stage, cfg_);
  const Mat y = encode(flatten(stage), cache, dropout);

  Mat h1 = y * params_.tp_w1.value;
  h1.rowwise() += params_.tp_b1.value.row(0);
  Mat g = gelu(h1);
  Mat n, xhat, inv_std;
  layer_norm_fwd(g, params_.tp_ln_g, params_.tp_ln_b, &n, &xhat, &inv_std);
  if (cache != nullptr) {
    cache->tp_h1 = h1;
    cache->tp_g = g;
    cache->tp_ln_xhat = xhat;
    cache->tp_ln_inv_std = inv_std;
    cache->tp_n = n;
  }
  Mat logits;
  if (cfg_.tie_embeddings) {
    logits = n * params_.tok_emb.value.transpose();
  } else {
    logits = n * params_.tp_out_w.value;
  }
  logits.rowwise() += params_.tp_out_b.value.row(0);
  return logits;
}

template <typename Scalar>
void InsertionModel<Scalar>::backward_counts(const Mat& dlogits,
                                             const ForwardCache<Scalar>& cache) {
  params_.mi_w.grad += cache.y.transpose() * dlogits;
  params_.mi_b.grad.row(0) += dlogits.colwise().sum();
  Mat dy = dlogits * params_.mi_w.value.transpose();
  backward_encoder(std::move(dy), cache);
}

template <typename Scalar>
void InsertionModel<Scalar>::backward_tokens(const Mat& dlogits,
                                             const ForwardCache<Scalar>& cache) {
  Mat dn;
  if (cfg_.tie_embeddings) {
    params_.tok_emb.grad += dlogits.transpose() * cache.tp_n;
    dn = dlogits * params_.tok_emb.value;
  } else {
    params_.tp_out_w.grad += cache.tp_n.transpose() * dlogits;
    dn = dlogits * params_.tp_out_w.value.transpose();
  }
  params_.tp_out_b.grad.row(0) += dlogits.colwise().sum();

  Mat dg = layer_norm_bwd(dn, cache.tp_ln_xhat, cache.tp_ln_inv_std,
                          params_.tp_ln_g, params_.tp_ln_b);
  Mat dh1 = dg.cwiseProduct(gelu_grad(cache.tp_h1));
  params_.tp_w1.grad += cache.y.transpose() * dh1;
  params_.tp_b1.grad.row(0) += dh1.colwise().sum();
  Mat dy = dh1 * params_.tp_w1.value.transpose();
  backward_encoder(std::move(dy), cache);
}

template <typename Scalar>
void InsertionModel<Scalar>::backward_encoder(Mat dy,
                                              const ForwardCache<Scalar>& cache) {
  const auto d = static_cast<Eigen::Index>(cfg_.d_model);
  const int heads = cfg_.n_heads;
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

  Mat dx = layer_norm_bwd(dy, cache.lnf_xhat, cache.lnf_inv_std, params_.lnf_g,
                          params_.lnf_b);

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    auto& lay = params_.layers[static_cast<std::size_t>(l)];
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];

    // Feed-forward sub-block.
    Mat dffn = dx;
    if (lc.ffn_drop.size() > 0) dffn = dffn.cwiseProduct(lc.ffn_drop);
    lay.w2.grad += lc.g.transpose() * dffn;
    lay.b2.grad.row(0) += dffn.colwise().sum();
    Mat dg = dffn * lay.w2.value.transpose();
    Mat dh1 = dg.cwiseProduct(gelu_grad(lc.h1));
    lay.w1.grad += lc.f.transpose() * dh1;
    lay.b1.grad.row(0) += dh1.colwise().sum();
    Mat df = dh1 * lay.w1.value.transpose();
    Mat dx_mid =
        dx + layer_norm_bwd(df, lc.ln2_xhat, lc.ln2_inv_std, lay.ln2_g,
                            lay.ln2_b);

    // Attention sub-block.
    Mat dattn_out = dx_mid;
    if (lc.attn_drop.size() > 0) {
      dattn_out = dattn_out.cwiseProduct(lc.attn_drop);
    }
    lay.wo.grad += lc.ctx.transpose() * dattn_out;
    lay.bo.grad.row(0) += dattn_out.colwise().sum();
    Mat dctx = dattn_out * lay.wo.value.transpose();

    Mat dq = Mat::Zero(dctx.rows(), d);
    Mat dk = Mat::Zero(dctx.rows(), d);
    Mat dv = Mat::Zero(dctx.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const auto& p = lc.attn[static_cast<std::size_t>(h)];
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto dch = dctx.middleCols(h * dh, dh);
      Mat dp = dch * vh.transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dch;
      // Softmax backward per row.
      Mat ds(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const Scalar dot = (dp.row(i).array() * p.row(i).array()).sum();
        ds.row(i) =
            (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
      }
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * kh;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh;
    }
    lay.wq.grad += lc.a.transpose() * dq;
    lay.bq.grad.row(0) += dq.colwise().sum();
    lay.wk.grad += lc.a.transpose() * dk;
    lay.bk.grad.row(0) += dk.colwise().sum();
    lay.wv.grad += lc.a.transpose() * dv;
    lay.bv.grad.row(0) += dv.colwise().sum();
    Mat da = dq * lay.wq.value.transpose() + dk * lay.wk.value.transpose() +
             dv * lay.wv.value.transpose();
    dx = dx_mid + layer_norm_bwd(da, lc.ln1_xhat, lc.ln1_inv_std, lay.ln1_g,
                                 lay.ln1_b);
  }

  if (cache.emb_drop.size() > 0) dx = dx.cwiseProduct(cache.emb_drop);
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    params_.tok_emb.grad.row(cache.flat.ids[idx]) += dx.row(i);
    params_.pos_emb.grad.row(cache.flat.positions[idx]) += dx.row(i);
    params_.seg_emb.grad.row(cache.flat.segments[idx]) += dx.row(i);
  }
}

// ---------------------------------------------------------------------
// Checkpoint container.

namespace {
constexpr char kCkptMagic[8] = {'I', 'L', 'E', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

template <typename Scalar>
void InsertionModel<Scalar>::save(const std::string& path,
                                  const std::string& vocab_hash) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  binio::put<std::uint32_t>(out, kCkptVersion);
  nlohmann::json header;
  header["config"] = nlohmann::json::parse(cfg_.to_json());
  header["vocab_hash"] = vocab_hash;
  binio::put_string(out, header.dump());

  const auto ts = tensors();
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  std::uint64_t checksum = 0xcbf29ce484222325ull;
  for (const auto* t : ts) {
    binio::put_string(out, t->name);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->value.rows()));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->value.cols()));
    std::vector<float> buf(static_cast<std::size_t>(t->value.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < t->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
        buf[k++] = static_cast<float>(t->value(i, j));
      }
    }
    if (!buf.empty()) {
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
      checksum = fnv1a64(buf.data(), buf.size() * sizeof(float), checksum);
    }
  }
  binio::put<std::uint64_t>(out, checksum);
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

template <typename Scalar>
typename InsertionModel<Scalar>::Loaded InsertionModel<Scalar>::load(
    const std::string& path,
    const std::optional<std::string>& expected_vocab_hash,
    const ModelConfig* expected_structure) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  if (binio::get<std::uint32_t>(in, "checkpoint version") != kCkptVersion) {
    throw LineageError("unsupported checkpoint version: " + path);
  }
  const std::string header_text = binio::get_string(in, "checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid checkpoint header: ") + e.what());
  }
  const ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
  const std::string vocab_hash = header.at("vocab_hash").get<std::string>();
  if (expected_vocab_hash.has_value() && *expected_vocab_hash != vocab_hash) {
    throw LineageError("checkpoint vocab hash " + vocab_hash +
                       " does not match expected " + *expected_vocab_hash);
  }
  if (expected_structure != nullptr &&
      !cfg.compatible_with(*expected_structure)) {
    throw LineageError("checkpoint model structure is incompatible");
  }

  InsertionModel model(cfg, false);
  const auto ts = model.tensors();
  const auto n_tensors = binio::get<std::uint32_t>(in, "tensor count");
  if (n_tensors != ts.size()) {
    throw DataError("checkpoint tensor count mismatch");
  }
  std::uint64_t checksum = 0xcbf29ce484222325ull;
  for (auto* t : ts) {
    const std::string name = binio::get_string(in, "tensor name");
    if (name != t->name) {
      throw DataError("checkpoint tensor order mismatch: expected " + t->name +
                      ", found " + name);
    }
    const auto rows = binio::get<std::uint32_t>(in, "tensor rows");
    const auto cols = binio::get<std::uint32_t>(in, "tensor cols");
    if (rows != static_cast<std::uint32_t>(t->value.rows()) ||
        cols != static_cast<std::uint32_t>(t->value.cols())) {
      throw DataError("checkpoint tensor shape mismatch for " + t->name);
    }
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    if (!buf.empty()) {
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!in) throw DataError("truncated checkpoint tensor: " + t->name);
      checksum = fnv1a64(buf.data(), buf.size() * sizeof(float), checksum);
    }
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < t->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
        t->value(i, j) = static_cast<Scalar>(buf[k++]);
      }
    }
  }
  if (binio::get<std::uint64_t>(in, "checksum") != checksum) {
    throw DataError("checkpoint checksum mismatch: " + path);
  }
  return Loaded{std::move(model), vocab_hash};
}

template class InsertionModel<float>;
template class InsertionModel<double>;

}  // namespace ilex
