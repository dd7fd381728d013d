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

// Encoder-decoder generative recommender over semantic IDs.
//
// The encoder reads a user's history with every item flattened into its SID
// tokens. The decoder starts from a single start-state row (the learned BOS
// vector, or a knowledge-fused replacement) and predicts one SID token per
// level with a per-level output head.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/graph.h"
#include "kgr/item_tokenizer.h"
#include "kgr/layers.h"

namespace kgr {

struct GrConfig {
  std::size_t d = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ff_hidden = 128;
  std::size_t max_items = 10;             // longest history the encoder accepts
  std::vector<std::size_t> level_sizes;  // decoding vocabulary per level

  std::size_t levels() const { return level_sizes.size(); }
  nlohmann::json to_json() const;
  static GrConfig from_json(const nlohmann::json& j);
};

struct EncoderOutput {
  Var h;                             // positions x d
  std::vector<std::uint8_t> valid;  // one flag per position
};

// Cross-attention keys and values for every decoder layer, projected once and
// reused across decoding steps and beams.
struct DecoderMemory {
  std::vector<nn::MultiHeadAttention::KeyValue> kv;
  std::vector<std::uint8_t> valid;  // empty means every position is valid
};

struct RankedItem {
  int item = -1;
  double log_prob = 0.0;
};

class GrModel {
 public:
  GrModel(const GrConfig& config, std::uint64_t seed,
          const std::string& prefix = "gr");
  GrModel(const GrModel&) = delete;
  GrModel& operator=(const GrModel&) = delete;

  const GrConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // |history| holds catalog item indices in chronological order. When
  // |pad_to| exceeds the history length the input is right-padded and the
  // padding is masked out of every attention.
  EncoderOutput encode(Graph& g, const std::vector<int>& history,
                       const SidTable& sids, std::size_t pad_to = 0,
                       const nn::RunMode& mode = {}) const;

  Var bos(Graph& g) const;
  DecoderMemory memory(Var memory, std::vector<std::uint8_t> valid = {}) const;
  DecoderMemory memory(const EncoderOutput& enc) const {
    return memory(enc.h, enc.valid);
  }

  // 1 x |V_l| logits for level l = prefix.size() given the earlier tokens.
  Var next_logits(Var start, const DecoderMemory& mem,
                  const std::vector<int>& prefix) const;
  // Logits for every level under teacher forcing on |target|.
  std::vector<Var> level_logits(Var start, const DecoderMemory& mem,
                                const std::vector<int>& target) const;
  // -sum_l log p(c_l | c_<l, context) under teacher forcing.
  Var nll(Var start, const DecoderMemory& mem,
          const std::vector<int>& target) const;
  // Mean token log-probability, exactly -nll / levels.
  Var score(Var start, const DecoderMemory& mem,
            const std::vector<int>& target) const;

  // Trie-constrained beam search. Results are distinct catalog items ordered
  // by total log-probability, ties broken by ascending item index.
  std::vector<RankedItem> generate_topk(Var start, const DecoderMemory& mem,
                                        std::size_t k, std::size_t beam,
                                        const PrefixTrie& trie) const;

 private:
  Var decode(Var start, const DecoderMemory& mem,
             const std::vector<int>& inputs) const;

  GrConfig config_;
  ParameterStore store_;
  std::string prefix_;
  std::vector<Parameter*> tok_emb_;  // one table per level
  Parameter* enc_pos_ = nullptr;
  Parameter* dec_pos_ = nullptr;
  Parameter* bos_ = nullptr;
  std::vector<nn::EncoderLayer> encoder_;
  nn::LayerNorm enc_norm_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::LayerNorm dec_norm_;
  std::vector<nn::Linear> heads_;
};

}  // namespace kgr
