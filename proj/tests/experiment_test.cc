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
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "kgr/config.h"
#include "kgr/errors.h"
#include "kgr/experiment.h"
#include "kgr/metrics.h"

namespace kgr {
namespace {

const std::string kSmoke = std::string(KGR_SOURCE_DIR) + "/configs/smoke.json";

const std::vector<std::string> kMetrics = {"recall@5", "recall@10", "ndcg@5",
                                           "ndcg@10"};

// Shared across cases: building the workbench dominates the runtime.
const Workbench& smoke_bench() {
  static const Workbench bench =
      Workbench::build(load_run_config(kSmoke, {}).experiment);
  return bench;
}

// Independent metric oracle: position lookup without the library helpers.
double oracle(const std::vector<RankedList>& lists, const SyntheticWorld& world,
              const std::string& metric, const std::string& cohort) {
  const bool ndcg = metric.rfind("ndcg", 0) == 0;
  const std::size_t k = std::stoul(metric.substr(metric.find('@') + 1));
  double sum = 0.0;
  std::size_t n = 0;
  for (const RankedList& l : lists) {
    const User& u = world.users[l.user];
    if (cohort != "all" && world.spec.cohorts[u.cohort].name != cohort) continue;
    ++n;
    for (std::size_t i = 0; i < l.items.size() && i < k; ++i) {
      if (l.items[i] != l.target) continue;
      sum += ndcg ? std::log(2.0) / std::log(static_cast<double>(i) + 2.0) : 1.0;
      break;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("strict merge names the unknown key") {
  nlohmann::json base = RunConfig().to_json();
  try {
    merge_strict(base, nlohmann::json::parse(R"({"train": {"stepz": 3}})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.stepz") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_override(base, "foo=1"), ConfigError);
  apply_override(base, "train.steps=7");
  apply_override(base, "train.variant=wo_cons");
  const RunConfig rc = RunConfig::from_json(base);
  CHECK(rc.experiment.train.steps == 7);
  CHECK(rc.experiment.train.variant == Variant::kNoCons);
}

TEST_CASE("config round trips and hashes ignore key order and seed") {
  nlohmann::json resolved;
  const RunConfig rc = load_run_config(kSmoke, {}, &resolved);
  CHECK(RunConfig::from_json(resolved).to_json() == resolved);
  CHECK(rc.to_json() == resolved);
  const auto a = nlohmann::json::parse(R"({"x": 1, "y": {"b": 2, "a": 3}})");
  const auto b = nlohmann::json::parse(R"({"y": {"a": 3, "b": 2}, "x": 1})");
  CHECK(config_hash(a) == config_hash(b));
  nlohmann::json reseeded = resolved;
  reseeded["seed"] = 99;
  CHECK(config_hash(reseeded) == config_hash(resolved));
  reseeded["train"]["steps"] = 21;
  CHECK(config_hash(reseeded) != config_hash(resolved));
  CHECK(config_hash(resolved).size() == 16);
  CHECK(run_directory("r", "abc", 3) == "r/abc-seed3");
}

TEST_CASE("invalid values are rejected") {
  CHECK_THROWS_AS(load_run_config(kSmoke, {"train.dual_unknown=1"}),
                  ConfigError);
  CHECK_THROWS_AS(load_run_config(kSmoke, {"train.eta_lambda=-1"}),
                  ConfigError);
  CHECK_THROWS_AS(load_run_config(kSmoke, {"train.variant=\"bogus\""}),
                  ConfigError);
}

TEST_CASE("ablation covers every variant, cohort and metric") {
  const Workbench& bench = smoke_bench();
  const EvalReport report = run_ablation(bench);
  const std::vector<std::string> labels = {
      "reference", "full", "wo_cons", "wo_fus", "wo_pcb", "rq", "fixed_beta_0.5"};
  std::vector<std::string> cohorts = {"all"};
  for (const CohortSpec& c : bench.world.spec.cohorts) cohorts.push_back(c.name);
  for (const std::string& v : labels) {
    CHECK(report.has_variant(v));
    for (const std::string& m : kMetrics) {
      for (const std::string& c : cohorts) {
        const double x = report.value(v, m, c);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
      }
    }
  }
  CHECK(report.rows.size() == labels.size() * kMetrics.size() * cohorts.size());

  for (const VariantRun& run : report.runs) {
    INFO(run.label);
    CHECK(run.error.empty());
    CHECK(run.log.size() == bench.config.train.steps);
    // Metrics recomputed from the ranked lists match the report.
    for (const std::string& m : kMetrics) {
      for (const std::string& c : cohorts) {
        CHECK(report.value(run.label, m, c) ==
              doctest::Approx(oracle(run.ranked, bench.world, m, c))
                  .epsilon(1e-12));
      }
    }
    if (run.variant == Variant::kNoCons || run.variant == Variant::kFixedBeta) {
      for (const TrainLogRow& r : run.log) CHECK(r.lambda == 0.0);
    }
  }

  const std::string path =
      (std::filesystem::temp_directory_path() / "kgr_report_test.csv").string();
  write_report_csv(path, report);
  const std::vector<MetricRow> rows = read_report_csv(path);
  std::remove(path.c_str());
  REQUIRE(rows.size() == report.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].variant == report.rows[i].variant);
    CHECK(rows[i].metric == report.rows[i].metric);
    CHECK(rows[i].cohort == report.rows[i].cohort);
    CHECK(rows[i].value == report.rows[i].value);
    CHECK(rows[i].seed == report.rows[i].seed);
  }
}

TEST_CASE("sweep reports one row set per codebook count") {
  const Workbench& bench = smoke_bench();
  const EvalReport report = sweep_k(bench, {1, 2});
  for (const std::string k : {"K=1", "K=2"}) {
    CHECK(report.has_variant(k));
    for (const std::string& m : kMetrics) CHECK(report.value(k, m) >= 0.0);
  }
  REQUIRE(report.runs.size() == 2);
  CHECK(report.runs[0].error.empty());
  CHECK(report.runs[1].error.empty());
}

TEST_CASE("ablation is deterministic for a fixed seed") {
  const Workbench& bench = smoke_bench();
  const EvalReport a = run_ablation(bench, {Variant::kFull});
  const EvalReport b = run_ablation(bench, {Variant::kFull});
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].value == b.rows[i].value);
  }
  REQUIRE(a.runs.size() == 1);
  CHECK(a.runs[0].log.back().loss_total == b.runs[0].log.back().loss_total);
}

}  // namespace kgr
