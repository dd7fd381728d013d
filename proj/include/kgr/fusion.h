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

// Knowledge fusion: the decoder's start-state vector attends over a user's
// knowledge matrix and the result becomes the decoder's first input.

#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "kgr/graph.h"
#include "kgr/layers.h"

namespace kgr {

enum class FusionMode { kReplace, kResidual };

FusionMode parse_fusion_mode(const std::string& name);
const char* fusion_mode_name(FusionMode mode);

class FusionBlock {
 public:
  FusionBlock(std::size_t d, std::size_t d_llm, std::size_t heads,
              std::uint64_t seed, const std::string& prefix = "fusion");
  FusionBlock(const FusionBlock&) = delete;
  FusionBlock& operator=(const FusionBlock&) = delete;

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const nn::MultiHeadAttention& attention() const { return attn_; }
  std::size_t heads() const { return attn_.heads(); }

  // Multi-head attention of |q0| (1 x d) over the rows of |h| (n x d_llm),
  // followed by the output projection and bias. An invalid or empty |h|
  // bypasses fusion and returns |q0|. Per-head weights go to |weights|.
  Var fuse_bos(Var q0, Var h, std::vector<Var>* weights = nullptr) const;

  // Sets the output projection to zero and its bias to |value| so that the
  // fused state is |value| for any input.
  void set_constant_output(const Tensor& value);

  // Number of non-bypassed fuse_bos() calls so far.
  std::uint64_t fusion_count() const { return fusions_.load(); }

 private:
  ParameterStore store_;
  nn::MultiHeadAttention attn_;
  Parameter* out_bias_ = nullptr;
  std::size_t d_ = 0;
  std::size_t d_llm_ = 0;
  mutable std::atomic<std::uint64_t> fusions_{0};
};

// replace: q_tilde; residual: q0 + q_tilde.
Var start_state(Var q0, Var q_tilde, FusionMode mode);

// Projects knowledge vectors to the backbone width so they can be appended
// to the encoder memory (the concatenation ablation).
class MemoryAdapter {
 public:
  MemoryAdapter(std::size_t d, std::size_t d_llm, std::uint64_t seed,
                const std::string& prefix = "concat");
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  Var operator()(Var h) const { return proj_(h); }

 private:
  ParameterStore store_;
  nn::Linear proj_;
};

}  // namespace kgr
