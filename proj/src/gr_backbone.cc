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

#include "kgr/gr_backbone.h"

#include <algorithm>

#include "kgr/errors.h"
#include "kgr/ops.h"

namespace kgr {

nlohmann::json GrConfig::to_json() const {
  return {{"d", d},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"heads", heads},
          {"ff_hidden", ff_hidden},
          {"max_items", max_items},
          {"level_sizes", level_sizes}};
}

GrConfig GrConfig::from_json(const nlohmann::json& j) {
  GrConfig c;
  c.d = j.at("d");
  c.encoder_layers = j.at("encoder_layers");
  c.decoder_layers = j.at("decoder_layers");
  c.heads = j.at("heads");
  c.ff_hidden = j.at("ff_hidden");
  c.max_items = j.at("max_items");
  c.level_sizes = j.at("level_sizes").get<std::vector<std::size_t>>();
  return c;
}

GrModel::GrModel(const GrConfig& config, std::uint64_t seed,
                 const std::string& prefix)
    : config_(config), prefix_(prefix) {
  if (config.levels() == 0) throw ConfigError("GrModel: no SID levels");
  if (config.heads == 0 || config.d % config.heads != 0) {
    throw ConfigError("GrModel: d=" + std::to_string(config.d) +
                      " not divisible by heads=" +
                      std::to_string(config.heads));
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config.levels(); ++l) {
    tok_emb_.push_back(&store_.add(
        prefix + ".tok_emb" + std::to_string(l),
        Tensor::normal({config.level_sizes[l], d}, emb_std, rng)));
  }
  enc_pos_ = &store_.add(
      prefix + ".enc_pos",
      Tensor::normal({config.max_items * config.levels(), d}, emb_std, rng));
  dec_pos_ = &store_.add(prefix + ".dec_pos",
                         Tensor::normal({config.levels(), d}, emb_std, rng));
  bos_ = &store_.add(prefix + ".bos", Tensor::normal({1, d}, emb_std, rng));
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    encoder_.push_back(nn::EncoderLayer::create(
        store_, prefix + ".enc" + std::to_string(i), d, config.heads,
        config.ff_hidden, rng));
  }
  enc_norm_ = nn::LayerNorm::create(store_, prefix + ".enc_norm", d);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    decoder_.push_back(nn::DecoderLayer::create(
        store_, prefix + ".dec" + std::to_string(i), d, config.heads,
        config.ff_hidden, rng));
  }
  dec_norm_ = nn::LayerNorm::create(store_, prefix + ".dec_norm", d);
  for (std::size_t l = 0; l < config.levels(); ++l) {
    heads_.push_back(nn::Linear::create(store_,
                                        prefix + ".head" + std::to_string(l),
                                        d, config.level_sizes[l], rng));
  }
}

EncoderOutput GrModel::encode(Graph& g, const std::vector<int>& history,
                              const SidTable& sids, std::size_t pad_to,
                              const nn::RunMode& mode) const {
  if (history.empty()) throw ContractError("encode: empty history");
  if (history.size() > config_.max_items) {
    throw ContractError("encode: history of " + std::to_string(history.size()) +
                        " items exceeds max_items=" +
                        std::to_string(config_.max_items));
  }
  if (sids.length() != config_.levels()) {
    throw ContractError("encode: SID length " + std::to_string(sids.length()) +
                        " vs model levels " + std::to_string(config_.levels()));
  }
  const std::size_t items = std::max(history.size(), pad_to);
  if (items > config_.max_items) {
    throw ContractError("encode: pad_to exceeds max_items");
  }
  const std::size_t L = config_.levels(), d = config_.d;
  const std::size_t n = items * L;

  // Input rows: token embedding + position embedding, zero for padding.
  Var pos = g.param(*enc_pos_);
  for (int item : history) {
    if (item < 0 || static_cast<std::size_t>(item) >= sids.sids.size()) {
      throw LookupError("encode: unknown item index " + std::to_string(item));
    }
  }
  // Gather per level so each table is looked up once.
  std::vector<Var> per_level(L);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<int> idx;
    idx.reserve(history.size());
    for (int item : history) idx.push_back(sids.sequence(item)[l]);
    per_level[l] = ops::embedding(g.param(*tok_emb_[l]), idx);
  }
  // Interleave back to item-major order.
  std::vector<Var> ordered;
  ordered.reserve(history.size() * L);
  for (std::size_t t = 0; t < history.size(); ++t) {
    for (std::size_t l = 0; l < L; ++l) {
      ordered.push_back(ops::slice_rows(per_level[l], t, t + 1));
    }
  }
  const std::size_t valid_rows = history.size() * L;
  Var x = ops::add(ops::concat_rows(ordered), ops::slice_rows(pos, 0, valid_rows));
  std::vector<std::uint8_t> valid(n, 0);
  std::fill(valid.begin(), valid.begin() + valid_rows, 1);
  ops::RowMask mask;
  if (n > valid_rows) {
    std::vector<Var> padded{x, g.constant(Tensor({n - valid_rows, d}))};
    x = ops::concat_rows(padded);
    mask.allowed.assign(n * n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy(valid.begin(), valid.end(), mask.allowed.begin() + r * n);
    }
  }
  for (const auto& layer : encoder_) x = layer(x, mask, mode);
  return {enc_norm_(x), std::move(valid)};
}

Var GrModel::bos(Graph& g) const { return g.param(*bos_); }

DecoderMemory GrModel::memory(Var memory,
                              std::vector<std::uint8_t> valid) const {
  if (memory.cols() != config_.d) {
    throw ContractError("memory: width " + std::to_string(memory.cols()) +
                        " vs d=" + std::to_string(config_.d));
  }
  DecoderMemory m;
  if (std::find(valid.begin(), valid.end(), 0) != valid.end()) {
    if (valid.size() != memory.rows()) {
      throw ContractError("memory: mask length mismatch");
    }
    m.valid = std::move(valid);
  }
  for (const auto& layer : decoder_) m.kv.push_back(layer.project_memory(memory));
  return m;
}

Var GrModel::decode(Var start, const DecoderMemory& mem,
                    const std::vector<int>& inputs) const {
  if (start.rows() != 1 || start.cols() != config_.d) {
    throw ContractError("decode: start state must be 1 x " +
                        std::to_string(config_.d) + ", got " +
                        start.shape().str());
  }
  if (inputs.size() >= config_.levels()) {
    throw ContractError("decode: too many input tokens");
  }
  Graph& g = *start.graph;
  Var x = start;
  if (!inputs.empty()) {
    std::vector<Var> rows{start};
    Var pos = g.param(*dec_pos_);
    for (std::size_t l = 0; l < inputs.size(); ++l) {
      const int idx[1] = {inputs[l]};
      rows.push_back(ops::add(ops::embedding(g.param(*tok_emb_[l]), idx),
                              ops::slice_rows(pos, l, l + 1)));
    }
    x = ops::concat_rows(rows);
  }
  ops::RowMask mask;
  if (!mem.valid.empty()) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      mask.allowed.insert(mask.allowed.end(), mem.valid.begin(), mem.valid.end());
    }
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = decoder_[i](x, mem.kv[i], mask);
  }
  return dec_norm_(x);
}

Var GrModel::next_logits(Var start, const DecoderMemory& mem,
                         const std::vector<int>& prefix) const {
  Var h = decode(start, mem, prefix);
  const std::size_t l = prefix.size();
  return heads_[l](ops::slice_rows(h, l, l + 1));
}

std::vector<Var> GrModel::level_logits(Var start, const DecoderMemory& mem,
                                       const std::vector<int>& target) const {
  if (target.size() != config_.levels()) {
    throw ContractError("level_logits: target length " +
                        std::to_string(target.size()) + " vs levels " +
                        std::to_string(config_.levels()));
  }
  Var h = decode(start, mem,
                 std::vector<int>(target.begin(), target.end() - 1));
  std::vector<Var> out;
  for (std::size_t l = 0; l < config_.levels(); ++l) {
    out.push_back(heads_[l](ops::slice_rows(h, l, l + 1)));
  }
  return out;
}

Var GrModel::nll(Var start, const DecoderMemory& mem,
                 const std::vector<int>& target) const {
  std::vector<Var> logits = level_logits(start, mem, target);
  Var total;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const int t[1] = {target[l]};
    if (t[0] < 0 || static_cast<std::size_t>(t[0]) >= config_.level_sizes[l]) {
      throw LookupError("nll: token " + std::to_string(t[0]) +
                        " outside level " + std::to_string(l));
    }
    Var term = ops::nll(logits[l], t);
    total = l == 0 ? term : ops::add(total, term);
  }
  return total;
}

Var GrModel::score(Var start, const DecoderMemory& mem,
                   const std::vector<int>& target) const {
  return ops::scale(nll(start, mem, target),
                    -1.0 / static_cast<double>(config_.levels()));
}

std::vector<RankedItem> GrModel::generate_topk(Var start,
                                               const DecoderMemory& mem,
                                               std::size_t k, std::size_t beam,
                                               const PrefixTrie& trie) const {
  if (beam < k) {
    throw ConfigError("generate_topk: beam " + std::to_string(beam) +
                      " smaller than k " + std::to_string(k));
  }
  if (trie.depth() != config_.levels()) {
    throw ContractError("generate_topk: trie depth does not match levels");
  }
  struct Beam {
    std::vector<int> prefix;
    int node = 0;
    double lp = 0.0;
  };
  std::vector<Beam> beams{Beam{}};
  const std::size_t L = config_.levels();
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<Beam> cands;
    for (const Beam& b : beams) {
      Var ls = ops::log_softmax(next_logits(start, mem, b.prefix));
      const auto v = ls.values();
      for (const auto& [tok, child] : trie.children(b.node)) {
        Beam c{b.prefix, child, b.lp + v[tok]};
        c.prefix.push_back(tok);
        cands.push_back(std::move(c));
      }
    }
    const bool last = l + 1 == L;
    std::sort(cands.begin(), cands.end(), [&](const Beam& a, const Beam& b) {
      if (a.lp != b.lp) return a.lp > b.lp;
      if (last) return trie.item_at(a.node) < trie.item_at(b.node);
      return a.prefix < b.prefix;
    });
    if (cands.size() > beam) cands.resize(beam);
    beams = std::move(cands);
  }
  std::vector<RankedItem> out;
  for (std::size_t i = 0; i < beams.size() && i < k; ++i) {
    out.push_back({trie.item_at(beams[i].node), beams[i].lp});
  }
  return out;
}

}  // namespace kgr
