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

#include "kgr/soft_instruction.h"

#include <cmath>

#include "kgr/errors.h"
#include "kgr/ops.h"

namespace kgr {

QuantizerKind parse_quantizer(const std::string& name) {
  if (name == "parallel") return QuantizerKind::kParallel;
  if (name == "residual") return QuantizerKind::kResidual;
  if (name == "mlp") return QuantizerKind::kMlp;
  throw ConfigError("unknown quantizer '" + name + "'");
}

const char* quantizer_name(QuantizerKind kind) {
  switch (kind) {
    case QuantizerKind::kParallel: return "parallel";
    case QuantizerKind::kResidual: return "residual";
    case QuantizerKind::kMlp: return "mlp";
  }
  return "?";
}

nlohmann::json InstructionConfig::to_json() const {
  return {{"d", d},         {"K", K},         {"codewords", codewords},
          {"d_llm", d_llm}, {"tau", tau},     {"quantizer", quantizer_name(kind)}};
}

Quantized quantize_st(Var u, Var book, double tau) {
  if (u.rows() != 1 || u.cols() != book.cols()) {
    throw ContractError("quantize_st: query " + u.shape().str() +
                        " vs codebook " + book.shape().str());
  }
  Graph& g = *u.graph;
  Var alpha = ops::neg_sq_dist(u, book);
  Quantized q;
  q.p = ops::softmax(alpha, tau);
  // argmax of -distance, lowest index on ties.
  auto a = alpha.values();
  std::size_t best = 0;
  for (std::size_t j = 1; j < a.size(); ++j) {
    if (a[j] > a[best]) best = j;
  }
  Tensor onehot({1, a.size()});
  onehot[best] = 1.0;
  // In replay mode the selection recorded on the first pass is reused.
  onehot = g.frozen(onehot);
  for (std::size_t j = 0; j < onehot.size(); ++j) {
    if (onehot[j] == 1.0) q.index = static_cast<int>(j);
  }
  q.st = ops::matmul(ops::straight_through(onehot, q.p), book);
  return q;
}

Var pool_context(const EncoderOutput& enc) {
  if (!enc.valid.empty() &&
      std::find(enc.valid.begin(), enc.valid.end(), 1) == enc.valid.end()) {
    throw ContractError("pool_context: every position is masked");
  }
  return ops::mean_rows(enc.h, enc.valid);
}

InstructionModule::InstructionModule(const InstructionConfig& config,
                                     std::uint64_t seed,
                                     const std::string& prefix)
    : config_(config) {
  if (!(config.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (config.K == 0 || config.K > config.d) {
    throw ConfigError("K must be in [1, d]");
  }
  if (config.codewords == 0) throw ConfigError("codewords must be >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d, dk = config.d_k();
  Tensor rot = random_orthogonal(d, rng);
  auto rotation_slice = [&](std::size_t begin, std::size_t width) {
    Tensor w({d, width});
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < width; ++c) w.at(r, c) = rot.at(r, begin + c);
    }
    return w;
  };
  auto add_book = [&](const std::string& name, std::size_t rows,
                      std::size_t width) {
    books_.push_back(&store_.add(
        name, Tensor::normal({rows, width},
                             1.0 / std::sqrt(static_cast<double>(width)), rng)));
  };
  auto add_to_llm = [&](const std::string& name, std::size_t width) {
    to_llm_.push_back(&store_.add(
        name, Tensor::normal({width, config.d_llm},
                             1.0 / std::sqrt(static_cast<double>(width)), rng)));
  };

  switch (config.kind) {
    case QuantizerKind::kParallel:
      for (std::size_t k = 0; k < config.K; ++k) {
        const std::string n = prefix + ".f" + std::to_string(k);
        proj_.push_back(nn::Linear::create(store_, n, d, dk, rng));
        proj_.back().weight()->value = rotation_slice(k * dk, dk);
        add_book(prefix + ".book" + std::to_string(k), config.codewords, dk);
        add_to_llm(prefix + ".to_llm" + std::to_string(k), dk);
      }
      break;
    case QuantizerKind::kResidual: {
      const std::size_t width = config.K * dk;
      proj_.push_back(nn::Linear::create(store_, prefix + ".f", d, width, rng));
      proj_.back().weight()->value = rotation_slice(0, width);
      for (std::size_t k = 0; k < config.K; ++k) {
        if (config.codewords > 1) {
          add_book(prefix + ".rbook" + std::to_string(k), config.codewords - 1,
                   width);
        } else {
          books_.push_back(nullptr);
        }
        add_to_llm(prefix + ".to_llm" + std::to_string(k), width);
      }
      break;
    }
    case QuantizerKind::kMlp:
      mlp_in_ = nn::Linear::create(store_, prefix + ".mlp_in", d, d, rng);
      mlp_out_ = nn::Linear::create(store_, prefix + ".mlp_out", d,
                                    config.K * config.d_llm, rng);
      break;
  }
}

std::vector<Var> InstructionModule::project_subspaces(Var h) const {
  if (h.rows() != 1 || h.cols() != config_.d) {
    throw ContractError("project_subspaces: expected 1 x " +
                        std::to_string(config_.d) + ", got " + h.shape().str());
  }
  std::vector<Var> out;
  for (const auto& f : proj_) out.push_back(f(h));
  return out;
}

Var InstructionModule::to_llm_space(const std::vector<Var>& st_vectors) const {
  if (st_vectors.size() > to_llm_.size()) {
    throw ContractError("to_llm_space: more vectors than projections");
  }
  std::vector<Var> rows;
  for (std::size_t k = 0; k < st_vectors.size(); ++k) {
    Graph& g = *st_vectors[k].graph;
    rows.push_back(ops::matmul(st_vectors[k], g.param(*to_llm_[k])));
  }
  return ops::concat_rows(rows);
}

Var InstructionModule::residual_book(Graph& g, std::size_t k) const {
  const std::size_t width = config_.K * config_.d_k();
  Var zero = g.constant(Tensor({1, width}));
  if (books_[k] == nullptr) return zero;
  std::vector<Var> parts{zero, g.param(*books_[k])};
  return ops::concat_rows(parts);
}

SoftInstruction InstructionModule::quantize_residual(Var u,
                                                     std::size_t depth) const {
  if (config_.kind != QuantizerKind::kResidual) {
    throw ContractError("quantize_residual on a non-residual module");
  }
  if (depth == 0 || depth > config_.K) {
    throw ContractError("quantize_residual: depth must be in [1, K]");
  }
  SoftInstruction out;
  Var r = u;
  for (std::size_t k = 0; k < depth; ++k) {
    Quantized q = quantize_st(r, residual_book(*u.graph, k), config_.tau);
    out.indices.push_back(q.index);
    out.distributions.push_back(q.p);
    out.st_vectors.push_back(q.st);
    r = ops::sub(r, q.st);
  }
  out.tokens = to_llm_space(out.st_vectors);
  return out;
}

SoftInstruction InstructionModule::extract(Var h) const {
  Graph& g = *h.graph;
  switch (config_.kind) {
    case QuantizerKind::kParallel: {
      SoftInstruction out;
      std::vector<Var> u = project_subspaces(h);
      for (std::size_t k = 0; k < config_.K; ++k) {
        Quantized q = quantize_st(u[k], g.param(*books_[k]), config_.tau);
        out.indices.push_back(q.index);
        out.distributions.push_back(q.p);
        out.st_vectors.push_back(q.st);
      }
      out.tokens = to_llm_space(out.st_vectors);
      return out;
    }
    case QuantizerKind::kResidual:
      return quantize_residual(project_subspaces(h)[0], config_.K);
    case QuantizerKind::kMlp: {
      SoftInstruction out;
      Var flat = mlp_out_(ops::gelu(mlp_in_(h)));
      out.tokens = ops::reshape(flat, {config_.K, config_.d_llm});
      return out;
    }
  }
  throw ContractError("unreachable quantizer kind");
}

nlohmann::json InstructionModule::export_codebooks() const {
  nlohmann::json j = config_.to_json();
  j["d_k"] = config_.d_k();
  nlohmann::json books = nlohmann::json::array();
  for (const Parameter* b : books_) {
    if (b == nullptr) {
      books.push_back({{"rows", 0}, {"cols", 0}, {"values", nlohmann::json::array()}});
      continue;
    }
    books.push_back({{"name", b->name()},
                     {"rows", b->value.rows()},
                     {"cols", b->value.cols()},
                     {"values", b->value.values()}});
  }
  j["books"] = books;
  nlohmann::json proj = nlohmann::json::array();
  for (const Parameter* w : to_llm_) {
    proj.push_back({{"name", w->name()},
                    {"rows", w->value.rows()},
                    {"cols", w->value.cols()},
                    {"values", w->value.values()}});
  }
  j["to_llm"] = proj;
  return j;
}

Var usage_entropy(std::span<const SoftInstruction> batch) {
  if (batch.empty() || batch[0].distributions.empty()) {
    throw ContractError("usage_entropy: no distributions");
  }
  const std::size_t K = batch[0].distributions.size();
  Var total;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<Var> rows;
    for (const auto& s : batch) rows.push_back(s.distributions.at(k));
    Var mean = ops::mean_rows(ops::concat_rows(rows));
    Var logp = ops::log(ops::add_scalar(mean, 1e-12));
    Var h = ops::scale(ops::sum(ops::mul(mean, logp)), -1.0);
    total = k == 0 ? h : ops::add(total, h);
  }
  return total;
}

}  // namespace kgr
