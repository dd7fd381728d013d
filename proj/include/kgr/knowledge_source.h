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

// Knowledge source: a small causal transformer standing in for a pretrained
// language model. It reads K soft-instruction tokens followed by one text
// embedding per history item and returns every output hidden state.

#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/graph.h"
#include "kgr/item_tokenizer.h"
#include "kgr/layers.h"

namespace kgr {

struct KnowledgeModelConfig {
  std::size_t vocab = 256;
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_hidden = 128;
  std::size_t max_len = 32;

  nlohmann::json to_json() const;
  static KnowledgeModelConfig from_json(const nlohmann::json& j);
};

struct LoraConfig {
  std::size_t rank = 8;
  double scale = 16.0;
  double dropout = 0.05;
};

// Knowledge vectors for one user, detached from any graph.
struct KnowledgeMatrix {
  Tensor h;  // (K + T) x d_llm
  std::string user_id;
  std::uint64_t fingerprint = 0;

  bool empty() const { return h.rows() == 0; }
};

class KnowledgeModel {
 public:
  KnowledgeModel(const KnowledgeModelConfig& config, std::uint64_t seed,
                 const std::string& prefix = "lm");
  KnowledgeModel(const KnowledgeModel&) = delete;
  KnowledgeModel& operator=(const KnowledgeModel&) = delete;

  const KnowledgeModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // Mean token embedding of an item's text. LookupError for a token outside
  // the vocabulary, ContractError for an empty text.
  Var embed_item_text(Graph& g, std::span<const int> tokens) const;
  // Precomputes the text embedding of every catalog item.
  void set_catalog(const std::vector<Item>& items);
  std::size_t catalog_size() const {
    return text_table_ == nullptr ? 0 : text_table_->value.rows();
  }

  // [prefix; h_text(i_1); ...; h_text(i_T)]. |prefix| may be an invalid Var
  // when no instruction tokens are used.
  Var build_input(Graph& g, Var prefix, const std::vector<int>& history) const;
  // All output hidden states of the causal forward pass.
  Var extract(Var input, const nn::RunMode& mode = {}) const;
  // Next-token logits from hidden states (pretraining head).
  Var lm_logits(Var hidden) const;
  Var token_inputs(Graph& g, std::span<const int> tokens) const;

  // Marks every base weight non-trainable.
  void freeze();
  // Low-rank adapters on the query and value projections of every layer.
  void attach_lora(const LoraConfig& lora, std::uint64_t seed);
  bool has_lora() const { return !adapters_.empty(); }
  std::vector<Parameter*> adapter_params() const { return adapters_; }

  std::uint64_t base_checksum() const;
  std::uint64_t adapter_checksum() const;
  std::vector<nn::EncoderLayer>& layers() { return layers_; }

  // Number of extract() calls so far; lets callers prove a code path never
  // runs the model.
  std::uint64_t forward_count() const { return forwards_.load(); }

 private:
  KnowledgeModelConfig config_;
  std::string prefix_;
  ParameterStore store_;
  ParameterStore cache_;  // derived text table, never trained
  Parameter* tok_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  Parameter* text_table_ = nullptr;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm norm_;
  nn::Linear head_;
  std::vector<Parameter*> adapters_;
  mutable std::atomic<std::uint64_t> forwards_{0};
};

struct PretrainConfig {
  int steps = 600;
  std::size_t batch = 8;
  std::size_t window = 24;
  double lr = 3e-3;
  std::uint64_t seed = 1;
  std::size_t eval_windows = 32;
};

struct PretrainReport {
  std::vector<double> losses;  // training loss per step (nats/token)
  double final_loss = 0.0;     // held-out windows, nats/token
  double unigram_entropy = 0.0;
};

// Entropy in nats of the corpus token frequencies.
double unigram_entropy(const std::vector<std::vector<int>>& corpus);

// Next-token training on windows cut from the concatenated corpus, then
// freezes the model.
PretrainReport pretrain_toy_lm(KnowledgeModel& model,
                               const std::vector<std::vector<int>>& corpus,
                               const PretrainConfig& config);

// Probe fixture: a fixed input matrix used to verify frozen weights.
void write_probe(const std::string& path, const Tensor& input);
Tensor read_probe(const std::string& path);
Tensor probe_output(const KnowledgeModel& model, const Tensor& input);

}  // namespace kgr
