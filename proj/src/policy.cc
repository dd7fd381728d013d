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

#include "kgr/policy.h"

#include "kgr/errors.h"
#include "kgr/ops.h"

namespace kgr {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "w/o_cons" || name == "wo_cons") return Variant::kNoCons;
  if (name == "w/o_fus" || name == "wo_fus") return Variant::kNoFus;
  if (name == "w/o_pcb" || name == "wo_pcb") return Variant::kNoPcb;
  if (name == "rq") return Variant::kRq;
  if (name == "fixed_beta" || name == "beta") return Variant::kFixedBeta;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCons: return "wo_cons";
    case Variant::kNoFus: return "wo_fus";
    case Variant::kNoPcb: return "wo_pcb";
    case Variant::kRq: return "rq";
    case Variant::kFixedBeta: return "fixed_beta";
  }
  return "?";
}

QuantizerKind variant_quantizer(Variant v) {
  if (v == Variant::kNoPcb) return QuantizerKind::kMlp;
  if (v == Variant::kRq) return QuantizerKind::kResidual;
  return QuantizerKind::kParallel;
}

namespace {

InstructionConfig instruction_for(const PolicyConfig& c, const KnowledgeModel& lm) {
  InstructionConfig ic = c.instruction;
  ic.d = c.gr.d;
  ic.d_llm = lm.config().d;
  ic.kind = variant_quantizer(c.variant);
  return ic;
}

}  // namespace

PolicyModel::PolicyModel(const PolicyConfig& config, KnowledgeModel& lm,
                         const SidTable& sids, std::uint64_t seed)
    : config_(config),
      lm_(lm),
      sids_(sids),
      gr_(config.gr, seed, "gr"),
      instr_(instruction_for(config, lm), seed + 1, "si"),
      fusion_(config.gr.d, lm.config().d, config.fusion_heads, seed + 2, "fusion"),
      concat_(config.gr.d, lm.config().d, seed + 3, "concat") {
  config_.instruction = instr_.config();
}

void PolicyModel::warm_start(const GrModel& reference) {
  if (gr_.params().copy_values_from(reference.params()) !=
      gr_.params().all().size()) {
    throw ContractError("warm_start: reference backbone does not match");
  }
  if (config_.fusion_mode == FusionMode::kReplace) {
    fusion_.set_constant_output(reference.params().at("gr.bos").value);
  } else {
    fusion_.set_constant_output(Tensor({1, config_.gr.d}));
  }
}

PolicyForward PolicyModel::finish(Graph& g, const EncoderOutput& enc,
                                  Var knowledge,
                                  SoftInstruction instruction) const {
  PolicyForward out;
  out.instruction = std::move(instruction);
  out.knowledge = knowledge;
  Var bos = gr_.bos(g);
  const bool have = knowledge.valid() && knowledge.rows() > 0;
  if (config_.variant == Variant::kNoFus) {
    out.start = bos;
    if (have) {
      std::vector<Var> parts{enc.h, concat_(knowledge)};
      std::vector<std::uint8_t> valid = enc.valid;
      if (!valid.empty()) valid.resize(valid.size() + knowledge.rows(), 1);
      out.memory = gr_.memory(ops::concat_rows(parts), valid);
    } else {
      out.memory = gr_.memory(enc);
    }
    return out;
  }
  out.memory = gr_.memory(enc);
  out.start = have ? start_state(bos, fusion_.fuse_bos(bos, knowledge),
                                 config_.fusion_mode)
                   : bos;
  return out;
}

PolicyForward PolicyModel::forward(Graph& g, const std::vector<int>& history,
                                   const nn::RunMode& mode) const {
  EncoderOutput enc = gr_.encode(g, history, sids_, 0, mode);
  SoftInstruction instr = instr_.extract(pool_context(enc));
  Var h = lm_.extract(lm_.build_input(g, instr.tokens, history), mode);
  return finish(g, enc, h, std::move(instr));
}

KnowledgeMatrix PolicyModel::compute_knowledge(
    const std::vector<int>& history) const {
  Graph g;
  g.set_grad_enabled(false);
  EncoderOutput enc = gr_.encode(g, history, sids_);
  SoftInstruction instr = instr_.extract(pool_context(enc));
  KnowledgeMatrix k;
  k.h = lm_.extract(lm_.build_input(g, instr.tokens, history)).value();
  return k;
}

KnowledgeMatrix PolicyModel::default_knowledge() const {
  Graph g;
  g.set_grad_enabled(false);
  SoftInstruction instr = instr_.extract(g.constant(Tensor({1, config_.gr.d})));
  KnowledgeMatrix k;
  k.h = lm_.extract(lm_.build_input(g, instr.tokens, {})).value();
  return k;
}

PolicyForward PolicyModel::forward_cached(Graph& g,
                                          const std::vector<int>& history,
                                          const Tensor& knowledge) const {
  EncoderOutput enc = gr_.encode(g, history, sids_);
  Var h = knowledge.rows() > 0 ? g.constant(knowledge) : Var{};
  return finish(g, enc, h, {});
}

std::vector<Parameter*> PolicyModel::trainable() {
  std::vector<Parameter*> out;
  for (ParameterStore* s : stores()) {
    for (Parameter* p : s->trainable()) out.push_back(p);
  }
  return out;
}

std::vector<const ParameterStore*> PolicyModel::stores() const {
  std::vector<const ParameterStore*> out{&gr_.params(), &instr_.params()};
  if (config_.variant == Variant::kNoFus) {
    out.push_back(&concat_.params());
  } else {
    out.push_back(&fusion_.params());
  }
  out.push_back(&lm_.params());
  return out;
}

std::vector<ParameterStore*> PolicyModel::stores() {
  std::vector<ParameterStore*> out{&gr_.params(), &instr_.params()};
  if (config_.variant == Variant::kNoFus) {
    out.push_back(&concat_.params());
  } else {
    out.push_back(&fusion_.params());
  }
  out.push_back(&lm_.params());
  return out;
}

}  // namespace kgr
