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

// The knowledge-conditioned recommender: backbone, soft-instruction
// extractor, knowledge model and fusion wired together per variant.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgr/fusion.h"
#include "kgr/gr_backbone.h"
#include "kgr/knowledge_source.h"
#include "kgr/soft_instruction.h"

namespace kgr {

enum class Variant {
  kFull,       // parallel codebooks + fusion + Lagrangian constraint
  kNoCons,     // same architecture, no constraint (lambda stays 0)
  kNoFus,      // knowledge appended to the encoder memory instead of fusion
  kNoPcb,      // MLP prefix tokens instead of parallel codebooks
  kRq,         // residual instead of parallel codebooks
  kFixedBeta,  // fixed-weight hinge penalty instead of the multiplier
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
QuantizerKind variant_quantizer(Variant v);

struct PolicyConfig {
  GrConfig gr;
  InstructionConfig instruction;
  std::size_t fusion_heads = 4;
  FusionMode fusion_mode = FusionMode::kReplace;
  Variant variant = Variant::kFull;
};

// Everything one forward pass produces for a user.
struct PolicyForward {
  Var start;  // decoder start state
  DecoderMemory memory;
  SoftInstruction instruction;
  Var knowledge;  // H_u
};

class PolicyModel {
 public:
  PolicyModel(const PolicyConfig& config, KnowledgeModel& lm,
              const SidTable& sids, std::uint64_t seed);
  PolicyModel(const PolicyModel&) = delete;
  PolicyModel& operator=(const PolicyModel&) = delete;

  const PolicyConfig& config() const { return config_; }
  GrModel& gr() { return gr_; }
  const GrModel& gr() const { return gr_; }
  InstructionModule& instruction() { return instr_; }
  const InstructionModule& instruction() const { return instr_; }
  FusionBlock& fusion() { return fusion_; }
  const FusionBlock& fusion() const { return fusion_; }
  KnowledgeModel& lm() { return lm_; }
  const KnowledgeModel& lm() const { return lm_; }
  const SidTable& sids() const { return sids_; }

  // Copies the reference backbone and makes fusion start as an identity on
  // the start state, so the untrained policy reproduces the reference.
  void warm_start(const GrModel& reference);

  // Full pass: context -> instruction -> knowledge -> fused decoder inputs.
  PolicyForward forward(Graph& g, const std::vector<int>& history,
                        const nn::RunMode& mode = {}) const;
  // Knowledge only (the nearline half of serving), detached.
  KnowledgeMatrix compute_knowledge(const std::vector<int>& history) const;
  // Knowledge for an empty context: the instruction of a zero context vector
  // with no item text after it. Used as the cold-start entry.
  KnowledgeMatrix default_knowledge() const;
  // Online half: decoder inputs from a cached knowledge matrix. An empty
  // matrix bypasses fusion.
  PolicyForward forward_cached(Graph& g, const std::vector<int>& history,
                               const Tensor& knowledge) const;

  std::vector<Parameter*> trainable();
  std::vector<const ParameterStore*> stores() const;
  std::vector<ParameterStore*> stores();

 private:
  PolicyForward finish(Graph& g, const EncoderOutput& enc, Var knowledge,
                       SoftInstruction instruction) const;

  PolicyConfig config_;
  KnowledgeModel& lm_;
  const SidTable& sids_;
  GrModel gr_;
  InstructionModule instr_;
  FusionBlock fusion_;
  MemoryAdapter concat_;
};

}  // namespace kgr
