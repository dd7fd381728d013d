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

#include "kgr/fusion.h"

#include <random>

#include "kgr/errors.h"
#include "kgr/ops.h"

namespace kgr {

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "replace") return FusionMode::kReplace;
  if (name == "residual") return FusionMode::kResidual;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

const char* fusion_mode_name(FusionMode mode) {
  return mode == FusionMode::kReplace ? "replace" : "residual";
}

FusionBlock::FusionBlock(std::size_t d, std::size_t d_llm, std::size_t heads,
                         std::uint64_t seed, const std::string& prefix)
    : d_(d), d_llm_(d_llm) {
  std::mt19937_64 rng(seed);
  attn_ = nn::MultiHeadAttention::create(store_, prefix + ".attn", d, d_llm, d,
                                         heads, rng, /*bias=*/false);
  out_bias_ = &store_.add(prefix + ".out_bias", Tensor({1, d}));
}

Var FusionBlock::fuse_bos(Var q0, Var h, std::vector<Var>* weights) const {
  if (q0.rows() != 1 || q0.cols() != d_) {
    throw ContractError("fuse_bos: q0 must be 1 x " + std::to_string(d_) +
                        ", got " + q0.shape().str());
  }
  if (!h.valid() || h.rows() == 0) return q0;
  if (h.cols() != d_llm_) {
    throw ContractError("fuse_bos: knowledge width " + std::to_string(h.cols()) +
                        " vs d_llm " + std::to_string(d_llm_));
  }
  fusions_.fetch_add(1);
  Var fused = attn_.attend(q0, attn_.project_kv(h), {}, {}, weights);
  return ops::add_row(fused, q0.graph->param(*out_bias_));
}

void FusionBlock::set_constant_output(const Tensor& value) {
  if (!(value.shape() == out_bias_->value.shape())) {
    throw ContractError("set_constant_output: shape " + value.shape().str());
  }
  Parameter* w = attn_.o().weight();
  w->value = Tensor(w->value.shape());
  out_bias_->value = value;
}

Var start_state(Var q0, Var q_tilde, FusionMode mode) {
  return mode == FusionMode::kReplace ? q_tilde : ops::add(q0, q_tilde);
}

MemoryAdapter::MemoryAdapter(std::size_t d, std::size_t d_llm,
                             std::uint64_t seed, const std::string& prefix) {
  std::mt19937_64 rng(seed);
  proj_ = nn::Linear::create(store_, prefix + ".proj", d_llm, d, rng);
}

}  // namespace kgr
