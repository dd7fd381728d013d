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
#include <set>

#include "doctest.h"
#include "fixtures.h"
#include "kgr/checkpoint.h"
#include "kgr/errors.h"
#include "kgr/grad_check.h"
#include "kgr/ops.h"

namespace kgr {
namespace {

using testing::random_history;
using testing::random_sids;
using testing::small_gr;

void zero_heads(GrModel& m) {
  for (Parameter* p : m.params().all()) {
    if (p->name().find(".head") != std::string::npos) p->value = Tensor(p->value.shape());
  }
}

// Sequence log-probability by an explicit softmax over teacher-forced logits.
double oracle_log_prob(const GrModel& m, Var start, const DecoderMemory& mem,
                       const std::vector<int>& seq) {
  std::vector<Var> logits = m.level_logits(start, mem, seq);
  double total = 0.0;
  for (std::size_t l = 0; l < seq.size(); ++l) {
    auto z = logits[l].values();
    double mx = *std::max_element(z.begin(), z.end()), s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    total += z[seq[l]] - mx - std::log(s);
  }
  return total;
}

}  // namespace

TEST_CASE("encode shape, order sensitivity and padding") {
  SidTable sids = random_sids(40, 3, 4, 1);
  GrModel m(small_gr(sids), 7);
  const std::size_t L = sids.length();
  Graph g;
  EncoderOutput e = m.encode(g, {3, 9, 12}, sids);
  CHECK(e.h.rows() == 3 * L);
  CHECK(e.h.cols() == 16);

  // Items 3 and 9 need distinct SIDs for the swap to matter.
  REQUIRE(sids.sequence(3) != sids.sequence(9));
  EncoderOutput swapped = m.encode(g, {9, 3, 12}, sids);
  CHECK(swapped.h.value() != e.h.value());

  EncoderOutput one = m.encode(g, {5}, sids);
  EncoderOutput padded = m.encode(g, {5}, sids, 4);
  CHECK(padded.h.rows() == 4 * L);
  CHECK(std::count(padded.valid.begin(), padded.valid.end(), 1) == static_cast<long>(L));
  for (std::size_t i = 0; i < L * 16; ++i) {
    CHECK(padded.h.values()[i] == doctest::Approx(one.h.values()[i]).epsilon(1e-14));
  }
  // Decoding against the padded memory ignores the padding.
  Var a = m.score(m.bos(g), m.memory(one), sids.sequence(2));
  Var b = m.score(m.bos(g), m.memory(padded), sids.sequence(2));
  CHECK(a.item() == doctest::Approx(b.item()).epsilon(1e-14));

  CHECK_THROWS_AS(m.encode(g, {}, sids), ContractError);
  CHECK_THROWS_AS(m.encode(g, {1000}, sids), LookupError);
  CHECK_THROWS_AS(m.encode(g, {1, 2, 3, 4, 5, 6, 7}, sids), ContractError);
}

TEST_CASE("nll and score closed forms") {
  SidTable sids;
  sids.sids = {SemanticId{{1, 3}, 0}, SemanticId{{2, 0}, 0}};
  sids.level_sizes = {4, 4};
  GrModel m(small_gr(sids), 3);
  zero_heads(m);
  Graph g;
  DecoderMemory mem = m.memory(m.encode(g, {0, 1}, sids));
  Var loss = m.nll(m.bos(g), mem, {1, 3});
  CHECK(loss.item() == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-14));
  CHECK(m.score(m.bos(g), mem, {1, 3}).item() ==
        doctest::Approx(-std::log(4.0)).epsilon(1e-14));

  // A confident model: biases put all mass on the targets.
  m.params().at("gr.head0.b").value[1] = 1e3;
  m.params().at("gr.head1.b").value[3] = 1e3;
  Graph g2;
  DecoderMemory mem2 = m.memory(m.encode(g2, {0, 1}, sids));
  CHECK(m.nll(m.bos(g2), mem2, {1, 3}).item() == 0.0);
  CHECK(m.score(m.bos(g2), mem2, {1, 3}).item() == 0.0);
}

TEST_CASE("nll, score and probabilities agree with recomputation") {
  SidTable sids = random_sids(50, 3, 4, 2);
  GrModel m(small_gr(sids), 5);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    DecoderMemory mem = m.memory(m.encode(g, random_history(50, 4, rng), sids));
    const auto target = sids.sequence(trial);
    const double lp = oracle_log_prob(m, m.bos(g), mem, target);
    const double nll = m.nll(m.bos(g), mem, target).item();
    const double s = m.score(m.bos(g), mem, target).item();
    CHECK(nll == doctest::Approx(-lp).epsilon(1e-12));
    CHECK(s == -nll / static_cast<double>(sids.length()));
    // exp(L s) equals the product of per-token probabilities.
    std::vector<Var> logits = m.level_logits(m.bos(g), mem, target);
    double prod = 1.0;
    for (std::size_t l = 0; l < target.size(); ++l) {
      Var p = ops::softmax(logits[l]);
      prod *= p.values()[target[l]];
    }
    CHECK(std::exp(sids.length() * s) == doctest::Approx(prod).epsilon(1e-12));
  }
}

TEST_CASE("scores are bit-identical across repeated runs") {
  SidTable sids = random_sids(30, 3, 4, 4);
  GrModel m(small_gr(sids), 6);
  const std::vector<int> h{1, 4, 7};
  double first = 0.0;
  for (int run = 0; run < 3; ++run) {
    Graph g;
    double s = m.score(m.bos(g), m.memory(m.encode(g, h, sids)), sids.sequence(2)).item();
    if (run == 0) first = s;
    CHECK(s == first);
  }
}

TEST_CASE("beam search equals exhaustive ranking when the beam covers the catalog") {
  SidTable sids = random_sids(120, 3, 5, 9);
  PrefixTrie trie(sids);
  GrModel m(small_gr(sids), 11);
  std::mt19937_64 rng(12);
  for (int user = 0; user < 10; ++user) {
    Graph g;
    g.set_grad_enabled(false);
    DecoderMemory mem = m.memory(m.encode(g, random_history(120, 5, rng), sids));
    Var bos = m.bos(g);
    std::vector<RankedItem> oracle;
    for (std::size_t i = 0; i < sids.sids.size(); ++i) {
      oracle.push_back({static_cast<int>(i), oracle_log_prob(m, bos, mem, sids.sequence(i))});
    }
    std::sort(oracle.begin(), oracle.end(), [](const RankedItem& a, const RankedItem& b) {
      return a.log_prob != b.log_prob ? a.log_prob > b.log_prob : a.item < b.item;
    });
    auto ranked = m.generate_topk(bos, mem, 120, 120, trie);
    REQUIRE(ranked.size() == 120);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      CHECK(ranked[r].item == oracle[r].item);
      CHECK(ranked[r].log_prob == doctest::Approx(oracle[r].log_prob).epsilon(1e-12));
      CHECK(trie.contains(sids.sequence(ranked[r].item)));
    }
    auto top1 = m.generate_topk(bos, mem, 1, 120, trie);
    CHECK(top1[0].item == oracle[0].item);

    // Wider beams never lower the best log-probability.
    double prev = -1e300;
    for (std::size_t beam : {1, 2, 4, 8, 16}) {
      double best = m.generate_topk(bos, mem, 1, beam, trie)[0].log_prob;
      CHECK(best >= prev);
      prev = best;
    }
    auto top5 = m.generate_topk(bos, mem, 5, 10, trie);
    std::set<int> distinct;
    for (auto& r : top5) distinct.insert(r.item);
    CHECK(distinct.size() == 5);
  }
  Graph g;
  DecoderMemory mem = m.memory(m.encode(g, {1}, sids));
  CHECK_THROWS_AS(m.generate_topk(m.bos(g), mem, 5, 4, trie), ConfigError);
}

TEST_CASE("nll gradients match finite differences") {
  SidTable sids = random_sids(20, 3, 3, 3);
  GrConfig cfg = small_gr(sids, 8);
  GrModel m(cfg, 2);
  std::vector<Parameter*> ps = m.params().all();
  auto f = [&](Graph& g) {
    DecoderMemory mem = m.memory(m.encode(g, {1, 2}, sids, 3));
    return m.nll(m.bos(g), mem, sids.sequence(4));
  };
  CHECK(grad_check(f, ps).max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round-trip") {
  namespace fs = std::filesystem;
  SidTable sids = random_sids(30, 3, 4, 4);
  GrConfig cfg = small_gr(sids);
  GrModel a(cfg, 1), b(cfg, 2);
  const fs::path path = fs::temp_directory_path() / "kgr_gr_ckpt.json";
  const ParameterStore* src[] = {&a.params()};
  save_checkpoint(path.string(), {{"model", cfg.to_json()}}, src);
  ParameterStore* dst[] = {&b.params()};
  auto header = load_checkpoint(path.string(), dst);
  CHECK(GrConfig::from_json(header.at("model")).level_sizes == cfg.level_sizes);
  CHECK(a.params().checksum() == b.params().checksum());
  fs::remove(path);
}

}  // namespace kgr
