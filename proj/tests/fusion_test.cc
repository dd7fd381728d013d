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
#include <random>

#include "doctest.h"
#include "fixtures.h"
#include "kgr/errors.h"
#include "kgr/fusion.h"
#include "kgr/ops.h"

namespace kgr {
namespace {

// Explicit loops over heads and keys.
Tensor brute_force(const FusionBlock& f, const Tensor& q0, const Tensor& h) {
  const auto& a = f.attention();
  const Tensor& wq = a.q().weight()->value;
  const Tensor& wk = a.k().weight()->value;
  const Tensor& wv = a.v().weight()->value;
  const Tensor& wo = a.o().weight()->value;
  const std::size_t d = wq.cols(), heads = a.heads(), dh = d / heads;
  const std::size_t n = h.rows(), dl = h.cols();
  std::vector<double> q(d, 0), cat(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < q0.cols(); ++i) q[j] += q0[i] * wq.at(i, j);
  }
  for (std::size_t hd = 0; hd < heads; ++hd) {
    std::vector<double> s(n, 0), p(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = hd * dh; j < (hd + 1) * dh; ++j) {
        double k = 0;
        for (std::size_t i = 0; i < dl; ++i) k += h.at(r, i) * wk.at(i, j);
        s[r] += q[j] * k;
      }
      s[r] /= std::sqrt(static_cast<double>(dh));
    }
    double mx = *std::max_element(s.begin(), s.end()), z = 0;
    for (std::size_t r = 0; r < n; ++r) z += p[r] = std::exp(s[r] - mx);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = hd * dh; j < (hd + 1) * dh; ++j) {
        double v = 0;
        for (std::size_t i = 0; i < dl; ++i) v += h.at(r, i) * wv.at(i, j);
        cat[j] += p[r] / z * v;
      }
    }
  }
  Tensor out({1, d});
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < d; ++i) out[j] += cat[i] * wo.at(i, j);
  }
  return out;
}

}  // namespace

TEST_CASE("fuse_bos matches a brute-force recomputation") {
  FusionBlock f(8, 6, 2, 3);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Tensor q0 = Tensor::normal({1, 8}, 1.0, rng), h = Tensor::normal({5, 6}, 1.0, rng);
    std::vector<Var> w;
    auto got = f.fuse_bos(g.constant(q0), g.constant(h), &w).values();
    Tensor want = brute_force(f, q0, h);
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(got[j] - want[j]) < 1e-10);
    REQUIRE(w.size() == 2);
    for (const Var& p : w) {
      double s = 0;
      for (double v : p.values()) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("single and repeated knowledge rows") {
  FusionBlock f(8, 6, 2, 4);
  std::mt19937_64 rng(2);
  Graph g;
  Tensor v = Tensor::normal({1, 6}, 1.0, rng);
  Tensor rep({4, 6});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 6; ++c) rep.at(r, c) = v[c];
  }
  Var a = f.fuse_bos(g.constant(Tensor::normal({1, 8}, 1.0, rng)), g.constant(v));
  Var b = f.fuse_bos(g.constant(Tensor::normal({1, 8}, 1.0, rng)), g.constant(v));
  Var c = f.fuse_bos(g.constant(Tensor::normal({1, 8}, 1.0, rng)), g.constant(rep));
  // One key: weight 1 on v regardless of the query, so q0 drops out.
  Var expect = ops::matmul(ops::matmul(g.constant(v), g.param(*f.attention().v().weight())),
                           g.param(*f.attention().o().weight()));
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(a.values()[j] == doctest::Approx(expect.values()[j]).epsilon(1e-13));
    CHECK(b.values()[j] == doctest::Approx(a.values()[j]).epsilon(1e-13));
    CHECK(c.values()[j] == doctest::Approx(a.values()[j]).epsilon(1e-13));
  }
}

TEST_CASE("empty knowledge bypasses fusion; scale sanity") {
  FusionBlock f(8, 6, 2, 5);
  std::mt19937_64 rng(3);
  Graph g;
  Var q0 = g.constant(Tensor::normal({1, 8}, 1.0, rng));
  CHECK(f.fuse_bos(q0, Var{}).value() == q0.value());
  Tensor h = Tensor::normal({4, 6}, 1.0, rng);
  for (double c : {1e-3, 1e-1, 1.0, 10.0, 1e3}) {
    Tensor hc = h;
    for (double& x : hc.values()) x *= c;
    CHECK(f.fuse_bos(q0, g.constant(hc)).value().all_finite());
  }
  CHECK_THROWS_AS(f.fuse_bos(q0, g.constant(Tensor({2, 5}))), ContractError);
}

TEST_CASE("start-state modes") {
  Graph g;
  Var q0 = g.constant(Tensor::row({1, 2, 3}));
  Var qt = g.constant(Tensor::row({0.5, -1, 4}));
  CHECK(start_state(q0, q0, FusionMode::kReplace).value() == q0.value());
  CHECK(start_state(q0, g.constant(Tensor({1, 3})), FusionMode::kResidual).value() ==
        q0.value());
  CHECK(start_state(q0, qt, FusionMode::kResidual).value() == Tensor::row({1.5, 1, 7}));
  CHECK(parse_fusion_mode("residual") == FusionMode::kResidual);
  CHECK_THROWS_AS(parse_fusion_mode("gate"), ConfigError);
}

TEST_CASE("constant-output fusion preserves the backbone bit for bit") {
  SidTable sids = testing::random_sids(30, 3, 4, 2);
  GrModel ref(testing::small_gr(sids), 1), pol(testing::small_gr(sids), 2);
  pol.params().copy_values_from(ref.params());
  FusionBlock f(16, 6, 2, 7);
  f.set_constant_output(ref.params().at("gr.bos").value);
  std::mt19937_64 rng(3);
  for (int u = 0; u < 10; ++u) {
    auto hist = testing::random_history(30, 4, rng);
    Graph g;
    const double s_ref =
        ref.score(ref.bos(g), ref.memory(ref.encode(g, hist, sids)), sids.sequence(u)).item();
    Var fused = f.fuse_bos(pol.bos(g), g.constant(Tensor::normal({5, 6}, 1.0, rng)));
    const double s_pol =
        pol.score(fused, pol.memory(pol.encode(g, hist, sids)), sids.sequence(u)).item();
    CHECK(s_ref == s_pol);
  }
}

}  // namespace kgr
