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

// Reference-constrained training: the per-sample degradation hinge, the
// batch constraint, the Lagrangian and fixed-weight objectives, projected
// dual ascent on the multiplier, and the training loop that ties them up.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kgr/datagen.h"
#include "kgr/gr_backbone.h"
#include "kgr/knowledge_source.h"
#include "kgr/optim.h"
#include "kgr/policy.h"

namespace kgr {

struct DualState {
  double lambda = 0.05;
  double eta_lambda = 5e-4;
  double epsilon = 1e-4;
  double delta = 1e-4;
  double beta = 0.0;  // fixed penalty weight, used only by kFixedBeta

  void validate() const;
};

enum class Strategy { kFrozen, kLora };
Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct TrainConfig {
  Variant variant = Variant::kFull;
  Strategy strategy = Strategy::kFrozen;
  LoraConfig lora;
  OptimizerConfig optimizer;  // SGD, lr 1e-4, clip 1.0 by default
  LrSchedule schedule = LrSchedule::kConstant;  // decay of the primal lr
  std::size_t steps = 200;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  DualState dual;
  double entropy_weight = 0.0;  // codeword-usage entropy bonus
  double divergence_factor = 1e3;

  void validate() const;
};

// max(0, s_ref - s_theta - delta).
double margin_penalty(double s_ref, double s_theta, double delta);
// l_rec + lambda (c - epsilon).
double lagrangian_loss(double l_rec, double c, const DualState& dual);
// l_rec + beta max(0, c - epsilon).
double fixed_beta_loss(double l_rec, double c, double beta, double epsilon);
// lambda <- max(0, lambda + eta_lambda (c - epsilon)).
void dual_step(DualState& dual, double c);

// Mean token log-probability of |ex.target| under the knowledge-free model.
double reference_score(const GrModel& reference, const SidTable& sids,
                       const Example& ex);
std::vector<double> reference_scores(const GrModel& reference,
                                     const SidTable& sids,
                                     std::span<const Example> data);

// Policy score of the same quantity with knowledge fused in.
double policy_score(const PolicyModel& policy, const Example& ex);

// Forward-only batch constraint: mean margin penalty over |batch|.
double batch_constraint(const PolicyModel& policy, const GrModel& reference,
                        std::span<const Example> batch, double delta);

// Graph pieces of one batch objective.
struct BatchObjective {
  Var total;
  Var rec;         // mean NLL
  Var constraint;  // mean hinge
  std::vector<double> policy_scores;
};

// Builds the variant's objective for |batch| (pointers into the dataset)
// with the multiplier / beta of |dual|. The whole batch shares one graph so
// the objective is literally L_rec + lambda (C - eps) or its fixed-beta form.
BatchObjective build_objective(Graph& g, const PolicyModel& policy,
                               std::span<const Example* const> batch,
                               std::span<const double> s_ref,
                               const DualState& dual, Variant variant,
                               double entropy_weight,
                               const nn::RunMode& mode = {});

struct TrainLogRow {
  std::size_t step = 0;
  double loss_rec = 0.0;
  double constraint = 0.0;
  double lambda = 0.0;  // value after this step's dual update
  double loss_total = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  DualState dual;
  std::uint64_t checksum = 0;  // over every trainable store after training
  std::uint64_t reference_checksum_before = 0;
  std::uint64_t reference_checksum_after = 0;
};

// Alternating primal (optimizer) and dual (projected ascent) updates. Throws
// NumericError on divergence or a non-finite gradient; the partial log is
// written to |log_path| first when one is given.
TrainResult train(PolicyModel& policy, const GrModel& reference,
                  std::span<const Example> data, const TrainConfig& config,
                  const std::string& log_path = "");

void write_train_log(const std::string& path, std::span<const TrainLogRow> log);

// Knowledge-free pretraining of the reference backbone on the same data.
struct ReferenceTrainConfig {
  OptimizerConfig optimizer{OptimizerKind::kAdamW, 3e-3};
  std::size_t steps = 600;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};
std::vector<double> train_reference(GrModel& model, const SidTable& sids,
                                    std::span<const Example> data,
                                    const ReferenceTrainConfig& config);

// Analytic toy: min (x - target)^2 s.t. max(0, 1 - x) <= eps, solved with
// the same primal optimizer and dual_step as the real trainer.
struct ToyResult {
  double x = 0.0;
  double lambda = 0.0;
  double constraint = 0.0;
  std::vector<TrainLogRow> log;
};
ToyResult solve_toy(double target, double x0, std::size_t steps, double lr,
                    DualState dual);

// Deterministic epoch-wise shuffling batch sampler.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace kgr
