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

// Small shared fixtures for unit tests.

#pragma once

#include <random>

#include "kgr/gr_backbone.h"
#include "kgr/item_tokenizer.h"
#include "kgr/knowledge_source.h"
#include "kgr/policy.h"

namespace kgr::testing {

// Random catalog of |n| items encoded with |levels| levels of |m| codewords.
inline SidTable random_sids(std::size_t n, std::size_t levels, std::size_t m,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor x = Tensor::normal({n, levels * 2}, 1.0, rng);
  return encode_catalog(x, fit_codebooks(x, levels, m, seed));
}

inline GrConfig small_gr(const SidTable& sids, std::size_t d = 16) {
  GrConfig c;
  c.d = d;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.ff_hidden = 2 * d;
  c.max_items = 6;
  c.level_sizes = sids.level_sizes;
  return c;
}

inline std::vector<int> random_history(std::size_t n_items, std::size_t len,
                                       std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n_items) - 1);
  std::vector<int> h(len);
  for (int& v : h) v = pick(rng);
  return h;
}

inline KnowledgeModelConfig tiny_lm(std::size_t d = 8) {
  KnowledgeModelConfig c;
  c.vocab = 32;
  c.d = d;
  c.layers = 1;
  c.heads = 2;
  c.ff_hidden = 2 * d;
  c.max_len = 32;
  return c;
}

inline std::vector<Item> text_catalog(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(0, 31);
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.id = "i" + std::to_string(i);
    it.content = {0.0};
    for (int j = 0; j < 3; ++j) it.text_tokens.push_back(tok(rng));
    items.push_back(it);
  }
  return items;
}

// Reference backbone plus a warm-started policy over a random catalog.
struct TinyStack {
  explicit TinyStack(std::uint64_t seed, Variant variant = Variant::kFull,
                     std::size_t d = 8, std::size_t k = 2)
      : sids(random_sids(24, 2, 4, seed)),
        items(text_catalog(24, seed + 1)),
        lm(tiny_lm(d), seed + 2),
        reference(small_gr(sids, d), seed + 3),
        policy(policy_config(sids, d, k, variant), lm, sids, seed + 4) {
    lm.set_catalog(items);
    lm.freeze();
    policy.warm_start(reference);
  }

  static PolicyConfig policy_config(const SidTable& sids, std::size_t d,
                                    std::size_t k, Variant variant) {
    PolicyConfig c;
    c.gr = small_gr(sids, d);
    c.instruction.K = k;
    c.instruction.codewords = 4;
    c.fusion_heads = 2;
    c.variant = variant;
    return c;
  }

  SidTable sids;
  std::vector<Item> items;
  KnowledgeModel lm;
  GrModel reference;
  PolicyModel policy;
};

}  // namespace kgr::testing
