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

#include "kgr/knowledge_source.h"

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "kgr/errors.h"
#include "kgr/ops.h"
#include "kgr/optim.h"

namespace kgr {
namespace {

bool is_adapter(const std::string& name) {
  return name.find(".lora_") != std::string::npos;
}

}  // namespace

nlohmann::json KnowledgeModelConfig::to_json() const {
  return {{"vocab", vocab},         {"d", d},
          {"layers", layers},       {"heads", heads},
          {"ff_hidden", ff_hidden}, {"max_len", max_len}};
}

KnowledgeModelConfig KnowledgeModelConfig::from_json(const nlohmann::json& j) {
  KnowledgeModelConfig c;
  c.vocab = j.at("vocab");
  c.d = j.at("d");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ff_hidden = j.at("ff_hidden");
  c.max_len = j.at("max_len");
  return c;
}

KnowledgeModel::KnowledgeModel(const KnowledgeModelConfig& config,
                               std::uint64_t seed, const std::string& prefix)
    : config_(config), prefix_(prefix) {
  if (config.heads == 0 || config.d % config.heads != 0) {
    throw ConfigError("knowledge model: d not divisible by heads");
  }
  std::mt19937_64 rng(seed);
  const double std = 1.0 / std::sqrt(static_cast<double>(config.d));
  tok_emb_ = &store_.add(prefix + ".tok_emb",
                         Tensor::normal({config.vocab, config.d}, 1.0, rng));
  pos_emb_ = &store_.add(prefix + ".pos_emb",
                         Tensor::normal({config.max_len, config.d}, std, rng));
  for (std::size_t i = 0; i < config.layers; ++i) {
    layers_.push_back(nn::EncoderLayer::create(
        store_, prefix + ".layer" + std::to_string(i), config.d, config.heads,
        config.ff_hidden, rng));
  }
  norm_ = nn::LayerNorm::create(store_, prefix + ".norm", config.d);
  head_ = nn::Linear::create(store_, prefix + ".head", config.d, config.vocab,
                             rng);
}

Var KnowledgeModel::embed_item_text(Graph& g,
                                    std::span<const int> tokens) const {
  if (tokens.empty()) throw ContractError("embed_item_text: empty text");
  return ops::mean_rows(ops::embedding(g.param(*tok_emb_), tokens));
}

void KnowledgeModel::set_catalog(const std::vector<Item>& items) {
  Tensor table({items.size(), config_.d});
  Graph g;
  g.set_grad_enabled(false);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto v = embed_item_text(g, items[i].text_tokens).values();
    std::copy(v.begin(), v.end(), table.data() + i * config_.d);
  }
  if (text_table_ == nullptr) {
    text_table_ = &cache_.add(prefix_ + ".text_table", std::move(table), false);
  } else {
    text_table_->value = std::move(table);
  }
}

Var KnowledgeModel::token_inputs(Graph& g, std::span<const int> tokens) const {
  return ops::embedding(g.param(*tok_emb_), tokens);
}

Var KnowledgeModel::build_input(Graph& g, Var prefix,
                                const std::vector<int>& history) const {
  if (text_table_ == nullptr) {
    throw ContractError("build_input: set_catalog() was not called");
  }
  std::vector<Var> parts;
  if (prefix.valid()) {
    if (prefix.cols() != config_.d) {
      throw ContractError("build_input: prefix width " +
                          std::to_string(prefix.cols()) + " vs d_llm " +
                          std::to_string(config_.d));
    }
    parts.push_back(prefix);
  }
  if (!history.empty()) {
    parts.push_back(ops::embedding(g.param(*text_table_), history));
  }
  if (parts.empty()) throw ContractError("build_input: empty input");
  return parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
}

Var KnowledgeModel::extract(Var input, const nn::RunMode& mode) const {
  const std::size_t n = input.rows();
  if (n == 0 || n > config_.max_len) {
    throw ContractError("knowledge model: input length " + std::to_string(n) +
                        " outside [1, " + std::to_string(config_.max_len) + "]");
  }
  forwards_.fetch_add(1);
  Graph& g = *input.graph;
  Var x = ops::add(input, ops::slice_rows(g.param(*pos_emb_), 0, n));
  ops::RowMask causal;
  causal.causal = true;
  for (const auto& layer : layers_) x = layer(x, causal, mode);
  return norm_(x);
}

Var KnowledgeModel::lm_logits(Var hidden) const { return head_(hidden); }

void KnowledgeModel::freeze() {
  for (Parameter* p : store_.all()) {
    if (!is_adapter(p->name())) p->trainable = false;
  }
}

void KnowledgeModel::attach_lora(const LoraConfig& lora, std::uint64_t seed) {
  if (has_lora()) throw ContractError("attach_lora: adapters already present");
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) {
    for (nn::Linear* lin : {&layer.attention().q(), &layer.attention().v()}) {
      lin->attach_lora(store_, lora.rank, lora.scale, lora.dropout, rng);
      adapters_.push_back(lin->lora()->a);
      adapters_.push_back(lin->lora()->b);
    }
  }
}

std::uint64_t KnowledgeModel::base_checksum() const {
  return store_.checksum_if(
      [](const std::string& n) { return !is_adapter(n); });
}

std::uint64_t KnowledgeModel::adapter_checksum() const {
  return store_.checksum_if(is_adapter);
}

double unigram_entropy(const std::vector<std::vector<int>>& corpus) {
  std::map<int, double> counts;
  double total = 0;
  for (const auto& s : corpus) {
    for (int t : s) {
      counts[t] += 1;
      total += 1;
    }
  }
  double h = 0;
  for (const auto& [t, c] : counts) h -= (c / total) * std::log(c / total);
  return h;
}

PretrainReport pretrain_toy_lm(KnowledgeModel& model,
                               const std::vector<std::vector<int>>& corpus,
                               const PretrainConfig& config) {
  std::vector<int> stream;
  for (const auto& s : corpus) stream.insert(stream.end(), s.begin(), s.end());
  const std::size_t w = config.window;
  if (w < 2 || w > model.config().max_len) {
    throw ConfigError("pretrain: window must be in [2, max_len]");
  }
  if (stream.size() < 2 * w) throw ContractError("pretrain: corpus too small");

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> start(0, stream.size() - w);
  // Held-out windows are fixed up front.
  std::vector<std::size_t> eval;
  for (std::size_t i = 0; i < config.eval_windows; ++i) eval.push_back(start(rng));

  auto window_loss = [&](Graph& g, std::size_t at) {
    std::vector<int> in(stream.begin() + at, stream.begin() + at + w - 1);
    std::vector<int> target(stream.begin() + at + 1, stream.begin() + at + w);
    Var h = model.extract(model.token_inputs(g, in));
    return ops::scale(ops::nll(model.lm_logits(h), target),
                      1.0 / static_cast<double>(w - 1));
  };

  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdamW;
  oc.lr = config.lr;
  oc.clip_norm = 1.0;
  Optimizer opt(oc);
  std::vector<Parameter*> params = model.params().trainable();
  PretrainReport report;
  for (int step = 0; step < config.steps; ++step) {
    Gradients total;
    double loss = 0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      Graph g;
      Var l = window_loss(g, start(rng));
      loss += l.item();
      total.merge(g.backward(l));
    }
    total.scale(1.0 / static_cast<double>(config.batch));
    opt.step(params, total);
    report.losses.push_back(loss / static_cast<double>(config.batch));
  }
  double held = 0;
  for (std::size_t at : eval) {
    Graph g;
    g.set_grad_enabled(false);
    held += window_loss(g, at).item();
  }
  report.final_loss = held / static_cast<double>(eval.size());
  report.unigram_entropy = unigram_entropy(corpus);
  model.freeze();
  return report;
}

void write_probe(const std::string& path, const Tensor& input) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write probe " + path);
  out << nlohmann::json{{"rows", input.rows()},
                        {"cols", input.cols()},
                        {"values", input.values()}}
             .dump();
}

Tensor read_probe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("probe fixture not found: " + path);
  auto j = nlohmann::json::parse(in);
  return Tensor({j.at("rows"), j.at("cols")},
                j.at("values").get<std::vector<double>>());
}

Tensor probe_output(const KnowledgeModel& model, const Tensor& input) {
  Graph g;
  g.set_grad_enabled(false);
  return model.extract(g.constant(input)).value();
}

}  // namespace kgr
