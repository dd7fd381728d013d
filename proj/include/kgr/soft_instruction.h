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

// Personalised soft instructions: the pooled user context is split into K
// learned subspaces, each quantised against its own codebook with a
// straight-through estimator, and the selected codewords are projected into
// the knowledge model's embedding space.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/gr_backbone.h"
#include "kgr/graph.h"
#include "kgr/layers.h"

namespace kgr {

enum class QuantizerKind {
  kParallel,  // K independent codebooks over K subspaces
  kResidual,  // K residual levels over one shared-width vector
  kMlp,       // no codebooks: an MLP emits the K prefix tokens directly
};

QuantizerKind parse_quantizer(const std::string& name);
const char* quantizer_name(QuantizerKind kind);

struct InstructionConfig {
  std::size_t d = 64;          // backbone hidden size
  std::size_t K = 5;           // number of codebooks / prefix tokens
  std::size_t codewords = 32;  // |V_k|
  std::size_t d_llm = 64;
  double tau = 1.0;
  QuantizerKind kind = QuantizerKind::kParallel;

  std::size_t d_k() const { return d / K; }
  nlohmann::json to_json() const;
};

struct Quantized {
  int index = 0;
  Var p;   // 1 x |V| distribution
  Var st;  // 1 x width straight-through codeword
};

// Nearest codeword of |u| (1 x w) in |book| (|V| x w) with a softmax over
// negative squared distances at temperature |tau|. The forward value of |st|
// is exactly the selected row; its gradient flows through |p| into every row.
Quantized quantize_st(Var u, Var book, double tau);

// Mean over valid encoder positions. Throws ContractError if none are valid.
Var pool_context(const EncoderOutput& enc);

struct SoftInstruction {
  std::vector<int> indices;
  std::vector<Var> distributions;
  std::vector<Var> st_vectors;
  Var tokens;  // K x d_llm
};

class InstructionModule {
 public:
  InstructionModule(const InstructionConfig& config, std::uint64_t seed,
                    const std::string& prefix = "si");
  InstructionModule(const InstructionModule&) = delete;
  InstructionModule& operator=(const InstructionModule&) = delete;

  const InstructionConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // u^k = f_k(h) for the parallel quantiser.
  std::vector<Var> project_subspaces(Var h) const;
  // t^k = z^k W_L^k, stacked into K x d_llm.
  Var to_llm_space(const std::vector<Var>& st_vectors) const;
  SoftInstruction extract(Var h) const;

  // Residual quantisation of |u| to |depth| levels, without the projection.
  SoftInstruction quantize_residual(Var u, std::size_t depth) const;
  // Residual codebook for level k; row 0 is a fixed zero codeword.
  Var residual_book(Graph& g, std::size_t k) const;

  // Codebooks and output projections as JSON (row-major matrices).
  nlohmann::json export_codebooks() const;

 private:
  InstructionConfig config_;
  ParameterStore store_;
  std::vector<nn::Linear> proj_;   // parallel: K maps; residual: one map
  std::vector<Parameter*> books_;  // residual: rows 1..|V|-1 of each level
  std::vector<Parameter*> to_llm_;
  nn::Linear mlp_in_, mlp_out_;
};

// Entropy of the batch-averaged codeword usage, summed over codebooks. A
// regulariser against codebook collapse.
Var usage_entropy(std::span<const SoftInstruction> batch);

}  // namespace kgr
