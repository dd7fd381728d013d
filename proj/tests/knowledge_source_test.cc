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

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "kgr/checkpoint.h"
#include "kgr/errors.h"
#include "kgr/knowledge_source.h"
#include "kgr/ops.h"

namespace kgr {
namespace {

KnowledgeModelConfig tiny() {
  KnowledgeModelConfig c;
  c.vocab = 32;
  c.d = 16;
  c.layers = 2;
  c.heads = 2;
  c.ff_hidden = 32;
  c.max_len = 16;
  return c;
}

std::vector<Item> tiny_catalog(std::size_t n, std::mt19937_64& rng) {
  std::vector<Item> items;
  std::uniform_int_distribution<int> tok(0, 31);
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.id = "i" + std::to_string(i);
    it.content = {0.0};
    for (int j = 0; j < 4; ++j) it.text_tokens.push_back(tok(rng));
    items.push_back(it);
  }
  return items;
}

// Numerical rank by Gaussian elimination with partial pivoting.
std::size_t numeric_rank(Tensor m, double tol = 1e-9) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < m.cols() && rank < m.rows(); ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < m.rows(); ++r) {
      if (std::abs(m.at(r, c)) > std::abs(m.at(piv, c))) piv = r;
    }
    if (std::abs(m.at(piv, c)) < tol) continue;
    for (std::size_t k = 0; k < m.cols(); ++k) std::swap(m.at(piv, k), m.at(rank, k));
    for (std::size_t r = rank + 1; r < m.rows(); ++r) {
      const double f = m.at(r, c) / m.at(rank, c);
      for (std::size_t k = 0; k < m.cols(); ++k) m.at(r, k) -= f * m.at(rank, k);
    }
    ++rank;
  }
  return rank;
}

}  // namespace

TEST_CASE("embed_item_text") {
  KnowledgeModel m(tiny(), 1);
  const Tensor& emb = m.params().at("lm.tok_emb").value;
  Graph g;
  const int one[] = {5};
  CHECK(m.embed_item_text(g, one).value() == emb.row_copy(5));
  const int a[] = {3, 9, 9, 1}, b[] = {9, 1, 3, 9};
  auto va = m.embed_item_text(g, a).values(), vb = m.embed_item_text(g, b).values();
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(va[c] == doctest::Approx(vb[c]).epsilon(1e-15));
    CHECK(va[c] == doctest::Approx((emb.at(3, c) + 2 * emb.at(9, c) + emb.at(1, c)) / 4)
                       .epsilon(1e-14));
  }
  const int oov[] = {32};
  CHECK_THROWS_AS(m.embed_item_text(g, oov), LookupError);
}

TEST_CASE("build_input and extract") {
  std::mt19937_64 rng(2);
  KnowledgeModel m(tiny(), 3);
  auto items = tiny_catalog(20, rng);
  m.set_catalog(items);
  Graph g;
  Var prefix = g.input(Tensor::normal({5, 16}, 1.0, rng), true);
  const std::vector<int> hist{4, 0, 7, 7, 12, 19, 2};
  Var x = m.build_input(g, prefix, hist);
  CHECK(x.rows() == 12);
  Var body = m.build_input(g, Var{}, hist);
  CHECK(body.rows() == 7);
  for (std::size_t t = 0; t < hist.size(); ++t) {
    auto want = m.embed_item_text(g, items[hist[t]].text_tokens).value();
    CHECK(body.value().row_copy(t) == want);
    CHECK(x.value().row_copy(5 + t) == want);
  }

  Var h1 = m.extract(x);
  Var h2 = m.extract(x);
  CHECK(h1.shape() == Shape{12, 16});
  CHECK(h1.value() == h2.value());

  // Changing instruction token 1 leaves row 0 and changes every later row.
  Tensor changed = prefix.value();
  for (std::size_t c = 0; c < 16; ++c) changed.at(1, c) += 0.5;
  Var h3 = m.extract(m.build_input(g, g.constant(changed), hist));
  CHECK(h3.value().row_copy(0) == h1.value().row_copy(0));
  for (std::size_t r = 1; r < 12; ++r) CHECK(h3.value().row_copy(r) != h1.value().row_copy(r));

  // Frozen weights still pass gradients to the instruction tokens.
  m.freeze();
  CHECK(m.params().trainable().empty());
  Graph g2;
  Var p2 = g2.input(prefix.value(), true);
  Var out = m.extract(m.build_input(g2, p2, hist));
  g2.backward(ops::sum(ops::mul(out, out)));
  CHECK(g2.grad(p2).norm() > 0.0);

  CHECK_THROWS_AS(m.extract(g.constant(Tensor({17, 16}))), ContractError);
}

TEST_CASE("LoRA adapters on the query and value projections") {
  std::mt19937_64 rng(4);
  KnowledgeModel m(tiny(), 5);
  auto items = tiny_catalog(10, rng);
  m.set_catalog(items);
  const Tensor probe = Tensor::normal({6, 16}, 1.0, rng);
  const Tensor before = probe_output(m, probe);
  const auto base = m.base_checksum();
  LoraConfig lc;
  lc.rank = 4;
  lc.scale = 16;
  lc.dropout = 0.05;
  m.attach_lora(lc, 9);
  m.freeze();
  CHECK(m.adapter_params().size() == 8);
  CHECK(m.params().trainable().size() == 8);
  // A starts at zero, so the adapted model is unchanged.
  CHECK(probe_output(m, probe) == before);
  CHECK(m.base_checksum() == base);

  nn::Linear& q = m.layers()[0].attention().q();
  q.lora()->a->value = Tensor::normal(q.lora()->a->value.shape(), 1.0, rng);
  Tensor x = Tensor::normal({3, 16}, 1.0, rng);
  Graph g;
  auto adapter = q(g.constant(x)).values();
  auto merged = ops::add_row(ops::matmul(g.constant(x), g.constant(q.merged_weight())),
                             g.param(*q.bias()))
                    .values();
  for (std::size_t i = 0; i < adapter.size(); ++i) {
    CHECK(std::abs(adapter[i] - merged[i]) < 1e-10);
  }

  // The update scale * A * B has rank at most r.
  Tensor delta = q.merged_weight();
  const Tensor& w = q.weight()->value;
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= w[i];
  CHECK(numeric_rank(delta) <= 4);

  LoraConfig bad;
  bad.rank = 16;
  KnowledgeModel other(tiny(), 5);
  CHECK_THROWS_AS(other.attach_lora(bad, 1), ConfigError);
}

TEST_CASE("pretraining beats the unigram baseline and is deterministic") {
  // Streams with strong within-item structure: each item repeats a short
  // topic-specific pattern.
  std::vector<std::vector<int>> corpus;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> topic(0, 3), noise(0, 31);
  for (int i = 0; i < 200; ++i) {
    const int t = topic(rng);
    std::vector<int> s;
    for (int j = 0; j < 6; ++j) s.push_back(t * 8 + (j % 4));
    s.push_back(noise(rng));
    corpus.push_back(s);
  }
  PretrainConfig pc;
  pc.steps = 120;
  pc.batch = 4;
  pc.window = 12;
  pc.lr = 5e-3;
  KnowledgeModel a(tiny(), 11), b(tiny(), 11);
  PretrainReport ra = pretrain_toy_lm(a, corpus, pc);
  PretrainReport rb = pretrain_toy_lm(b, corpus, pc);
  CHECK(ra.final_loss < ra.unigram_entropy);
  CHECK(ra.final_loss == rb.final_loss);
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(a.params().trainable().empty());

  // Checkpoint and probe fixture round-trip.
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "kgr_lm_test";
  fs::create_directories(dir);
  const ParameterStore* src[] = {&a.params()};
  save_checkpoint((dir / "lm.json").string(), {{"lm", tiny().to_json()}}, src);
  Tensor probe = Tensor::normal({5, 16}, 1.0, rng);
  write_probe((dir / "probe.json").string(), probe);
  KnowledgeModel c(tiny(), 99);
  ParameterStore* dst[] = {&c.params()};
  load_checkpoint((dir / "lm.json").string(), dst);
  Tensor p = read_probe((dir / "probe.json").string());
  CHECK(p == probe);
  CHECK(probe_output(c, p) == probe_output(a, p));
  fs::remove_all(dir);
}

}  // namespace kgr
