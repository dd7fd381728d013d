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

#include <atomic>
#include <random>
#include <thread>

#include "doctest.h"
#include "fixtures.h"
#include "kgr/errors.h"
#include "kgr/serving.h"

namespace kgr {
namespace {

using testing::TinyStack;

KnowledgeMatrix filled(std::size_t rows, double v) {
  KnowledgeMatrix k;
  k.h = Tensor({rows, 4}, v);
  return k;
}

// Tiny world over the stack's 24-item catalog.
struct TinyServing {
  TinyStack stack{90};
  PrefixTrie trie{stack.sids};
  std::map<std::string, std::vector<int>> histories;
  std::vector<std::string> users;

  TinyServing() {
    std::mt19937_64 rng(3);
    std::mt19937_64 fusion_rng(4);
    Parameter* o = stack.policy.fusion().params().find("fusion.attn.o.w");
    o->value = Tensor::normal(o->value.shape(), 0.3, fusion_rng);
    for (int u = 0; u < 12; ++u) {
      const std::string id = "u" + std::to_string(u);
      histories[id] = testing::random_history(24, 3, rng);
      users.push_back(id);
    }
  }
};

}  // namespace

TEST_CASE("repository versions are strictly increasing") {
  KnowledgeRepository repo(filled(1, 0.0));
  CHECK(repo.lookup("a") == nullptr);
  CHECK(repo.publish("a", filled(2, 1.0), 11, 0.0, 0.0) == 1);
  CHECK(repo.publish("a", filled(2, 2.0), 12, 5.0, 6.0) == 2);
  CHECK_THROWS_AS(repo.publish("a", filled(2, 3.0), 13, 4.0, 6.0), ContractError);
  CHECK_THROWS_AS(repo.publish("a", filled(2, 3.0), 13, 7.0, 6.0), ContractError);
  repo.confirm("a", 9.0, 9.0);
  auto e = repo.lookup("a");
  CHECK(e->version == 2);
  CHECK(e->refreshed_at == 9.0);
  CHECK(repo.lookup_count() == 2);
  CHECK(repo.peek("a")->version == 2);
  CHECK(repo.lookup_count() == 2);
}

TEST_CASE("concurrent readers never observe a torn entry") {
  KnowledgeRepository repo(filled(1, 0.0));
  repo.publish("u", filled(8, 1.0), 1, 0.0, 0.0);
  std::atomic<bool> stop{false};
  std::atomic<int> torn{0}, regress{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r) {
    readers.emplace_back([&] {
      std::uint64_t last = 0;
      while (!stop.load()) {
        auto e = repo.lookup("u");
        if (fnv1a(e->knowledge.h.span()) != e->value_checksum) ++torn;
        for (double v : e->knowledge.h.values()) {
          if (v != static_cast<double>(e->version)) ++torn;
        }
        if (e->version < last) ++regress;
        last = e->version;
      }
    });
  }
  for (int v = 2; v <= 400; ++v) {
    repo.publish("u", filled(8, v), v, v, v);
  }
  stop = true;
  for (auto& t : readers) t.join();
  CHECK(torn.load() == 0);
  CHECK(regress.load() == 0);
}

TEST_CASE("SimClock orders by time then insertion") {
  SimClock c;
  c.schedule(5.0, SimClock::Kind::kRequest, 1);
  c.schedule(2.0, SimClock::Kind::kRefresh, 2);
  c.schedule(5.0, SimClock::Kind::kPublish, 3);
  c.schedule(2.0, SimClock::Kind::kRequest, 4);
  std::vector<std::size_t> order;
  double last = 0.0;
  while (!c.empty()) {
    auto e = c.pop();
    CHECK(e.time >= last);
    last = e.time;
    order.push_back(e.payload);
  }
  CHECK(order == std::vector<std::size_t>{2, 4, 1, 3});
  CHECK_THROWS_AS(c.schedule(1.0, SimClock::Kind::kRequest), ContractError);
}

TEST_CASE("nearline refresh skips unchanged users and matches offline") {
  TinyServing s;
  const PolicyModel& p = s.stack.policy;
  KnowledgeRepository repo(p.default_knowledge());
  std::vector<std::pair<std::string, std::vector<int>>> batch;
  for (const auto& u : s.users) batch.emplace_back(u, s.histories[u]);
  CHECK(nearline_refresh(batch, 10.0, repo, p) == s.users.size());
  auto before = repo.peek("u0");
  CHECK(before->version == 1);
  CHECK(before->knowledge.h == p.compute_knowledge(s.histories["u0"]).h);
  batch[1].second.push_back(5);
  CHECK(nearline_refresh(batch, 20.0, repo, p) == 1);
  CHECK(repo.peek("u0")->version == 1);
  CHECK(repo.peek("u1")->version == 2);
  CHECK(repo.peek("u1")->refreshed_at == 20.0);
  CHECK(repo.peek("u1")->knowledge.h == p.compute_knowledge(batch[1].second).h);
}

TEST_CASE("serve_request does one lookup, one fusion and no knowledge pass") {
  TinyServing s;
  const PolicyModel& p = s.stack.policy;
  KnowledgeRepository repo(p.default_knowledge());
  nearline_refresh({{"u0", s.histories["u0"]}}, 0.0, repo, p);
  ServingConfig cfg;
  cfg.k = 5;
  cfg.beam = 8;
  std::vector<int> ranked;
  RequestTrace t = serve_request("u0", s.histories["u0"], 30.0, repo, p, s.trie,
                                 s.stack.items, cfg, &ranked);
  CHECK(t.lookup_count == 1);
  CHECK(t.fusion_count == 1);
  CHECK(t.llm_forward_count == 0);
  CHECK(!t.cold_start);
  CHECK(t.fresh);
  CHECK(t.staleness_ms == 30.0);
  CHECK(ranked.size() == 5);
  // Offline pipeline with the live knowledge model gives the same ranking.
  Graph g;
  g.set_grad_enabled(false);
  PolicyForward f = p.forward(g, s.histories["u0"]);
  auto offline = p.gr().generate_topk(f.start, f.memory, 5, 8, s.trie);
  for (std::size_t i = 0; i < 5; ++i) CHECK(offline[i].item == ranked[i]);

  RequestTrace cold = serve_request("u5", s.histories["u5"], 31.0, repo, p,
                                    s.trie, s.stack.items, cfg);
  CHECK(cold.cold_start);
  CHECK(cold.knowledge_version == 0);
  CHECK(cold.fusion_count == 1);
  CHECK(cold.llm_forward_count == 0);
  cfg.cold_start_bypass = true;
  RequestTrace bypass = serve_request("u5", s.histories["u5"], 32.0, repo, p,
                                      s.trie, s.stack.items, cfg);
  CHECK(bypass.fusion_count == 0);
}

TEST_CASE("scenario invariants and determinism") {
  TinyServing s;
  ServingConfig cfg;
  cfg.k = 5;
  cfg.beam = 8;
  cfg.refresh_period_ms = 50.0;
  cfg.refresh_batch = 4;
  cfg.refresh_cost_ms = 3.0;
  std::vector<WorkloadEntry> w;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> pick(0, s.users.size() - 1);
  for (int i = 0; i < 300; ++i) w.push_back({i * 2.0 + 1.0, s.users[pick(rng)]});
  std::vector<std::string> known(s.users.begin(), s.users.begin() + 9);
  auto run = [&](const ServingConfig& c) {
    return run_scenario(w, s.histories, known, s.stack.policy, s.trie,
                        s.stack.items, 6, c);
  };
  ScenarioResult a = run(cfg);
  REQUIRE(a.traces.size() == 300);
  std::map<std::string, std::uint64_t> last;
  for (const RequestTrace& t : a.traces) {
    CHECK(t.llm_forward_count == 0);
    CHECK(t.lookup_count == 1);
    CHECK(t.fusion_count == 1);
    if (!t.cold_start) {
      CHECK(t.knowledge_version >= last[t.user_id]);
      last[t.user_id] = t.knowledge_version;
      CHECK(t.staleness_ms <= cfg.refresh_period_ms + a.max_batch_duration_ms);
    }
  }
  CHECK(a.summary.at("cold_start_rate") > 0.0);
  CHECK(a.summary.at("recomputed_entries") > 9.0);
  CHECK(run(cfg).trace_checksum == a.trace_checksum);

  // Without periodic refresh every warm request sees version 1.
  cfg.refresh_period_ms = 0.0;
  ScenarioResult b = run(cfg);
  for (const RequestTrace& t : b.traces) {
    if (!t.cold_start) CHECK(t.knowledge_version == 1);
  }
}

}  // namespace kgr
