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

// Transformer building blocks over the autodiff engine.

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kgr/graph.h"
#include "kgr/ops.h"

namespace kgr::nn {

// Dropout is only active when |training| is set and an RNG is supplied.
struct RunMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

// Low-rank update W' = W + scale * A * B for a weight W of shape
// d_out x d_in. A starts at zero so an attached adapter is a no-op.
struct LoraAdapter {
  Parameter* a = nullptr;  // d_out x rank
  Parameter* b = nullptr;  // rank x d_in
  std::size_t rank = 0;
  double scale = 1.0;
  double dropout = 0.0;
};

// y = x W + bias with W stored as in_features x out_features, i.e. the
// transpose of the usual d_out x d_in convention.
class Linear {
 public:
  static Linear create(ParameterStore& store, const std::string& name,
                       std::size_t in, std::size_t out, std::mt19937_64& rng,
                       bool bias = true);

  Var operator()(Var x, const RunMode& mode = {}) const;

  // Throws ConfigError unless rank < min(in, out).
  void attach_lora(ParameterStore& store, std::size_t rank, double scale,
                   double dropout, std::mt19937_64& rng);
  // W + scale * A * B in the stored (in x out) layout.
  Tensor merged_weight() const;

  const std::string& name() const { return name_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }
  const std::optional<LoraAdapter>& lora() const { return lora_; }

 private:
  std::string name_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  std::optional<LoraAdapter> lora_;
};

class LayerNorm {
 public:
  static LayerNorm create(ParameterStore& store, const std::string& name,
                          std::size_t dim);
  Var operator()(Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

class MultiHeadAttention {
 public:
  struct KeyValue {
    Var k;
    Var v;
  };

  static MultiHeadAttention create(ParameterStore& store,
                                   const std::string& name,
                                   std::size_t query_dim, std::size_t kv_dim,
                                   std::size_t model_dim, std::size_t heads,
                                   std::mt19937_64& rng, bool bias = true);

  KeyValue project_kv(Var kv, const RunMode& mode = {}) const;
  // Optionally returns the per-head attention matrices through |weights|.
  Var attend(Var query_in, const KeyValue& kv, const ops::RowMask& mask = {},
             const RunMode& mode = {},
             std::vector<Var>* weights = nullptr) const;
  Var operator()(Var query_in, Var kv_in, const ops::RowMask& mask = {},
                 const RunMode& mode = {}) const {
    return attend(query_in, project_kv(kv_in, mode), mask, mode);
  }

  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return head_dim_; }
  Linear& q() { return q_; }
  Linear& k() { return k_; }
  Linear& v() { return v_; }
  Linear& o() { return o_; }
  const Linear& q() const { return q_; }
  const Linear& k() const { return k_; }
  const Linear& v() const { return v_; }
  const Linear& o() const { return o_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
  std::size_t head_dim_ = 0;
};

class FeedForward {
 public:
  static FeedForward create(ParameterStore& store, const std::string& name,
                            std::size_t dim, std::size_t hidden,
                            std::mt19937_64& rng);
  Var operator()(Var x) const;

 private:
  Linear up_, down_;
};

// Pre-norm self-attention block.
class EncoderLayer {
 public:
  static EncoderLayer create(ParameterStore& store, const std::string& name,
                             std::size_t dim, std::size_t heads,
                             std::size_t ff_hidden, std::mt19937_64& rng);
  Var operator()(Var x, const ops::RowMask& mask = {},
                 const RunMode& mode = {}) const;
  MultiHeadAttention& attention() { return attn_; }
  const MultiHeadAttention& attention() const { return attn_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  FeedForward ffn_;
};

// Pre-norm block: causal self-attention, cross-attention, feed-forward.
class DecoderLayer {
 public:
  static DecoderLayer create(ParameterStore& store, const std::string& name,
                             std::size_t dim, std::size_t heads,
                             std::size_t ff_hidden, std::mt19937_64& rng);
  MultiHeadAttention::KeyValue project_memory(Var memory) const {
    return cross_.project_kv(memory);
  }
  Var operator()(Var x, const MultiHeadAttention::KeyValue& memory,
                 const ops::RowMask& memory_mask = {}) const;

 private:
  LayerNorm ln1_, ln2_, ln3_;
  MultiHeadAttention self_, cross_;
  FeedForward ffn_;
};

}  // namespace kgr::nn
