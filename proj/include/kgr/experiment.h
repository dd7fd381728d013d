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

// End-to-end experiment plumbing: shared artifacts (world, split, semantic
// IDs, knowledge model, reference backbone), leave-one-out evaluation, the
// ablation harness and the codebook-count sweep.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/datagen.h"
#include "kgr/gr_backbone.h"
#include "kgr/knowledge_source.h"
#include "kgr/policy.h"
#include "kgr/trainer.h"

namespace kgr {

struct ExperimentConfig {
  std::uint64_t seed = 1;  // model initialisation and batch order
  std::uint64_t world_seed = 7;
  WorldSpec world;
  std::size_t max_history = 10;
  std::size_t sid_levels = 3;
  std::size_t sid_codewords = 16;
  GrConfig backbone;  // level_sizes is filled from the fitted IDs
  KnowledgeModelConfig lm;  // vocab follows world.text_vocab
  PretrainConfig lm_pretrain;
  ReferenceTrainConfig reference;
  InstructionConfig instruction;  // d and d_llm follow the backbone and lm
  std::size_t fusion_heads = 4;
  FusionMode fusion_mode = FusionMode::kReplace;
  TrainConfig train;
  std::vector<double> beta_grid = {0.1, 0.3, 0.5, 0.7};
  std::vector<std::size_t> k_values = {1, 3, 5, 7, 9};
  std::size_t beam = 20;
  std::size_t eval_users = 0;  // 0 evaluates every test user

  ExperimentConfig();
  nlohmann::json to_json() const;
  // Reads every key; the caller is responsible for rejecting unknown ones.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

// Shared, variant-independent artifacts.
struct Workbench {
  ExperimentConfig config;
  SyntheticWorld world;
  Split split;
  ItemCodebooks codebooks;
  SidTable sids;
  std::unique_ptr<PrefixTrie> trie;
  std::unique_ptr<KnowledgeModel> lm;
  std::unique_ptr<GrModel> reference;
  PretrainReport lm_report;
  std::vector<double> reference_losses;

  // Runs every stage: world, split, IDs, knowledge model, reference.
  static Workbench build(const ExperimentConfig& config);
  // Stage helpers, callable one at a time.
  void make_world();
  void make_sids();
  void make_lm(bool pretrain);
  void make_reference(bool pretrain);

  GrConfig backbone_config() const;
  PolicyConfig policy_config(Variant variant) const;
  std::unique_ptr<PolicyModel> make_policy(Variant variant) const;
  // Test examples, truncated to config.eval_users when set.
  std::vector<Example> eval_examples() const;
};

// Corpus for the knowledge model: item texts along training sequences.
std::vector<std::vector<int>> knowledge_corpus(const SyntheticWorld& world,
                                               const Split& split);

struct RankedList {
  int user = 0;
  int target = 0;
  std::vector<int> items;
};

std::vector<RankedList> rank_reference(const GrModel& reference,
                                       const SidTable& sids,
                                       const PrefixTrie& trie,
                                       std::span<const Example> examples,
                                       std::size_t k, std::size_t beam);
std::vector<RankedList> rank_policy(const PolicyModel& policy,
                                    const PrefixTrie& trie,
                                    std::span<const Example> examples,
                                    std::size_t k, std::size_t beam);

struct MetricRow {
  std::string variant;
  std::string metric;  // recall@5, recall@10, ndcg@5, ndcg@10
  double value = 0.0;
  std::string cohort;  // cohort name or "all"
  std::uint64_t seed = 0;
};

struct VariantRun {
  std::string label;
  Variant variant = Variant::kFull;
  std::vector<TrainLogRow> log;
  std::vector<RankedList> ranked;
  std::string error;  // non-empty when the run failed
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::vector<VariantRun> runs;
  std::uint64_t seed = 0;
  std::string config_hash;

  // Throws LookupError when absent.
  double value(const std::string& variant, const std::string& metric,
               const std::string& cohort = "all") const;
  bool has_variant(const std::string& variant) const;
};

// Appends Recall/NDCG@5/10 per cohort and overall for one ranked set.
void add_metrics(EvalReport& report, const std::string& variant,
                 std::span<const RankedList> lists, const SyntheticWorld& world,
                 std::uint64_t seed);
void write_report_csv(const std::string& path, const EvalReport& report);
std::vector<MetricRow> read_report_csv(const std::string& path);

// Trains one variant from the shared reference and evaluates it.
VariantRun run_variant(const Workbench& bench, Variant variant,
                       const std::string& label, TrainConfig train_config,
                       std::unique_ptr<PolicyModel>* keep = nullptr);

// Reference plus every ablation variant (fixed-beta once per grid value).
// A failing variant is recorded in its run's error field; the rest continue.
EvalReport run_ablation(const Workbench& bench,
                        const std::vector<Variant>& variants = {
                            Variant::kFull, Variant::kNoCons, Variant::kNoFus,
                            Variant::kNoPcb, Variant::kRq, Variant::kFixedBeta});

// One full-variant run per codebook count; variants are labelled "K=<k>".
EvalReport sweep_k(const Workbench& bench, const std::vector<std::size_t>& ks);

}  // namespace kgr
