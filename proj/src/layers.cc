// Copyright 2026 The KGR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kgr/layers.h"

#include <algorithm>
#include <cmath>

#include "kgr/errors.h"

namespace kgr::nn {

using ops::RowMask;

Linear Linear::create(ParameterStore& store, const std::string& name,
                      std::size_t in, std::size_t out, std::mt19937_64& rng,
                      bool bias) {
  Linear l;
  l.name_ = name;
  l.in_ = in;
  l.out_ = out;
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight_ = &store.add(name + ".w", Tensor::normal({in, out}, std, rng));
  if (bias) l.bias_ = &store.add(name + ".b", Tensor({1, out}));
  return l;
}

Var Linear::operator()(Var x, const RunMode& mode) const {
  Graph& g = *x.graph;
  Var y = ops::matmul(x, g.param(*weight_));
  if (lora_) {
    Var xin = x;
    if (mode.training && mode.rng != nullptr && lora_->dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - lora_->dropout);
      Tensor m(x.shape());
      const double inv = 1.0 / (1.0 - lora_->dropout);
      for (double& v : m.values()) v = keep(*mode.rng) ? inv : 0.0;
      xin = ops::mask(x, m);
    }
    Var low = ops::matmul_nt(xin, g.param(*lora_->b));
    Var delta = ops::matmul_nt(low, g.param(*lora_->a));
    y = ops::add(y, ops::scale(delta, lora_->scale));
  }
  if (bias_ != nullptr) y = ops::add_row(y, g.param(*bias_));
  return y;
}

void Linear::attach_lora(ParameterStore& store, std::size_t rank, double scale,
                         double dropout, std::mt19937_64& rng) {
  if (rank == 0 || rank >= std::min(in_, out_)) {
    throw ConfigError("LoRA rank " + std::to_string(rank) +
                      " must be in [1, min(d_out, d_in)) = [1, " +
                      std::to_string(std::min(in_, out_)) + ") for " + name_);
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("LoRA dropout must be in [0, 1)");
  }
  LoraAdapter a;
  a.rank = rank;
  a.scale = scale;
  a.dropout = dropout;
  a.a = &store.add(name_ + ".lora_a", Tensor({out_, rank}));
  a.b = &store.add(name_ + ".lora_b",
                   Tensor::normal({rank, in_},
                                  1.0 / std::sqrt(static_cast<double>(in_)),
                                  rng));
  lora_ = a;
}

Tensor Linear::merged_weight() const {
  Tensor w = weight_->value;
  if (!lora_) return w;
  // (A B)^T = B^T A^T, accumulated into the in x out layout.
  const Tensor& a = lora_->a->value;  // out x r
  const Tensor& b = lora_->b->value;  // r x in
  for (std::size_t i = 0; i < in_; ++i) {
    for (std::size_t o = 0; o < out_; ++o) {
      double s = 0.0;
      for (std::size_t r = 0; r < lora_->rank; ++r) s += a.at(o, r) * b.at(r, i);
      w.at(i, o) += lora_->scale * s;
    }
  }
  return w;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name,
                            std::size_t dim) {
  LayerNorm ln;
  ln.gain_ = &store.add(name + ".gain", Tensor({1, dim}, 1.0));
  ln.bias_ = &store.add(name + ".bias", Tensor({1, dim}));
  return ln;
}

Var LayerNorm::operator()(Var x) const {
  Graph& g = *x.graph;
  return ops::layer_norm(x, g.param(*gain_), g.param(*bias_));
}

MultiHeadAttention MultiHeadAttention::create(
    ParameterStore& store, const std::string& name, std::size_t query_dim,
    std::size_t kv_dim, std::size_t model_dim, std::size_t heads,
    std::mt19937_64& rng, bool bias) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError(name + ": model dim " + std::to_string(model_dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.heads_ = heads;
  m.head_dim_ = model_dim / heads;
  m.q_ = Linear::create(store, name + ".q", query_dim, model_dim, rng, bias);
  m.k_ = Linear::create(store, name + ".k", kv_dim, model_dim, rng, bias);
  m.v_ = Linear::create(store, name + ".v", kv_dim, model_dim, rng, bias);
  m.o_ = Linear::create(store, name + ".o", model_dim, model_dim, rng, bias);
  return m;
}

MultiHeadAttention::KeyValue MultiHeadAttention::project_kv(
    Var kv, const RunMode& mode) const {
  return {k_(kv, mode), v_(kv, mode)};
}

Var MultiHeadAttention::attend(Var query_in, const KeyValue& kv,
                               const RowMask& mask, const RunMode& mode,
                               std::vector<Var>* weights) const {
  Var q = q_(query_in, mode);
  const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Var> outs;
  outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t b = h * head_dim_, e = b + head_dim_;
    Var qh = heads_ == 1 ? q : ops::slice_cols(q, b, e);
    Var kh = heads_ == 1 ? kv.k : ops::slice_cols(kv.k, b, e);
    Var vh = heads_ == 1 ? kv.v : ops::slice_cols(kv.v, b, e);
    Var p = ops::softmax(ops::scale(ops::matmul_nt(qh, kh), inv), 1.0, mask);
    if (weights != nullptr) weights->push_back(p);
    outs.push_back(ops::matmul(p, vh));
  }
  Var cat = heads_ == 1 ? outs[0] : ops::concat_cols(outs);
  return o_(cat, mode);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name,
                                std::size_t dim, std::size_t hidden,
                                std::mt19937_64& rng) {
  FeedForward f;
  f.up_ = Linear::create(store, name + ".up", dim, hidden, rng);
  f.down_ = Linear::create(store, name + ".down", hidden, dim, rng);
  return f;
}

Var FeedForward::operator()(Var x) const { return down_(ops::gelu(up_(x))); }

EncoderLayer EncoderLayer::create(ParameterStore& store,
                                  const std::string& name, std::size_t dim,
                                  std::size_t heads, std::size_t ff_hidden,
                                  std::mt19937_64& rng) {
  EncoderLayer l;
  l.ln1_ = LayerNorm::create(store, name + ".ln1", dim);
  l.attn_ = MultiHeadAttention::create(store, name + ".attn", dim, dim, dim,
                                       heads, rng);
  l.ln2_ = LayerNorm::create(store, name + ".ln2", dim);
  l.ffn_ = FeedForward::create(store, name + ".ffn", dim, ff_hidden, rng);
  return l;
}

Var EncoderLayer::operator()(Var x, const RowMask& mask,
                             const RunMode& mode) const {
  Var h = ln1_(x);
  x = ops::add(x, attn_(h, h, mask, mode));
  return ops::add(x, ffn_(ln2_(x)));
}

DecoderLayer DecoderLayer::create(ParameterStore& store,
                                  const std::string& name, std::size_t dim,
                                  std::size_t heads, std::size_t ff_hidden,
                                  std::mt19937_64& rng) {
  DecoderLayer l;
  l.ln1_ = LayerNorm::create(store, name + ".ln1", dim);
  l.self_ = MultiHeadAttention::create(store, name + ".self", dim, dim, dim,
                                       heads, rng);
  l.ln2_ = LayerNorm::create(store, name + ".ln2", dim);
  l.cross_ = MultiHeadAttention::create(store, name + ".cross", dim, dim, dim,
                                        heads, rng);
  l.ln3_ = LayerNorm::create(store, name + ".ln3", dim);
  l.ffn_ = FeedForward::create(store, name + ".ffn", dim, ff_hidden, rng);
  return l;
}

Var DecoderLayer::operator()(Var x, const MultiHeadAttention::KeyValue& memory,
                             const RowMask& memory_mask) const {
  RowMask causal;
  causal.causal = true;
  Var h = ln1_(x);
  x = ops::add(x, self_(h, h, causal));
  x = ops::add(x, cross_.attend(ln2_(x), memory, memory_mask));
  return ops::add(x, ffn_(ln3_(x)));
}

}  // namespace kgr::nn
