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

#include "kgr/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kgr/errors.h"
#include "kgr/ops.h"

namespace kgr {

void DualState::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(eta_lambda >= 0.0)) throw ConfigError("eta_lambda must be >= 0");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(delta >= 0.0)) throw ConfigError("delta must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
}

Strategy parse_strategy(const std::string& name) {
  if (name == "frozen") return Strategy::kFrozen;
  if (name == "lora") return Strategy::kLora;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::string strategy_name(Strategy s) {
  return s == Strategy::kFrozen ? "frozen" : "lora";
}

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  dual.validate();
}

double margin_penalty(double s_ref, double s_theta, double delta) {
  if (delta < 0.0) throw ContractError("margin_penalty: delta < 0");
  return std::max(0.0, s_ref - s_theta - delta);
}

double lagrangian_loss(double l_rec, double c, const DualState& dual) {
  if (dual.lambda < 0.0) throw ContractError("lagrangian_loss: lambda < 0");
  return l_rec + dual.lambda * (c - dual.epsilon);
}

double fixed_beta_loss(double l_rec, double c, double beta, double epsilon) {
  if (beta < 0.0) throw ContractError("fixed_beta_loss: beta < 0");
  return l_rec + beta * std::max(0.0, c - epsilon);
}

void dual_step(DualState& dual, double c) {
  if (dual.lambda < 0.0) throw ContractError("dual_step: lambda < 0");
  dual.lambda = std::max(0.0, dual.lambda + dual.eta_lambda * (c - dual.epsilon));
}

double reference_score(const GrModel& reference, const SidTable& sids,
                       const Example& ex) {
  Graph g;
  g.set_grad_enabled(false);
  EncoderOutput enc = reference.encode(g, ex.history, sids);
  return reference.score(reference.bos(g), reference.memory(enc),
                         sids.sequence(ex.target))
      .item();
}

std::vector<double> reference_scores(const GrModel& reference,
                                     const SidTable& sids,
                                     std::span<const Example> data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const Example& ex : data) out.push_back(reference_score(reference, sids, ex));
  return out;
}

double policy_score(const PolicyModel& policy, const Example& ex) {
  Graph g;
  g.set_grad_enabled(false);
  PolicyForward f = policy.forward(g, ex.history);
  return policy.gr()
      .score(f.start, f.memory, policy.sids().sequence(ex.target))
      .item();
}

double batch_constraint(const PolicyModel& policy, const GrModel& reference,
                        std::span<const Example> batch, double delta) {
  if (batch.empty()) throw ContractError("batch_constraint: empty batch");
  double sum = 0.0;
  for (const Example& ex : batch) {
    sum += margin_penalty(reference_score(reference, policy.sids(), ex),
                          policy_score(policy, ex), delta);
  }
  return sum / static_cast<double>(batch.size());
}

BatchObjective build_objective(Graph& g, const PolicyModel& policy,
                               std::span<const Example* const> batch,
                               std::span<const double> s_ref,
                               const DualState& dual, Variant variant,
                               double entropy_weight,
                               const nn::RunMode& mode) {
  if (batch.empty()) throw ContractError("build_objective: empty batch");
  if (s_ref.size() != batch.size()) {
    throw ContractError("build_objective: one reference score per sample");
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double inv_l = 1.0 / static_cast<double>(policy.gr().config().levels());
  std::vector<Var> nlls, hinges;
  std::vector<SoftInstruction> instructions;
  BatchObjective out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = *batch[i];
    PolicyForward f = policy.forward(g, ex.history, mode);
    Var nll = policy.gr().nll(f.start, f.memory,
                              policy.sids().sequence(ex.target));
    nlls.push_back(nll);
    out.policy_scores.push_back(-nll.item() * inv_l);
    // s_ref - s_theta - delta = s_ref + nll / L - delta.
    hinges.push_back(ops::max_const(
        ops::add_scalar(ops::scale(nll, inv_l), s_ref[i] - dual.delta), 0.0));
    instructions.push_back(std::move(f.instruction));
  }
  out.rec = ops::scale(ops::sum(ops::concat_rows(nlls)), inv_b);
  out.constraint = ops::scale(ops::sum(ops::concat_rows(hinges)), inv_b);
  switch (variant) {
    case Variant::kNoCons:
      out.total = out.rec;
      break;
    case Variant::kFixedBeta:
      out.total = ops::add(
          out.rec, ops::scale(ops::max_const(ops::add_scalar(out.constraint,
                                                             -dual.epsilon),
                                             0.0),
                              dual.beta));
      break;
    default:
      out.total = ops::add(
          out.rec,
          ops::scale(ops::add_scalar(out.constraint, -dual.epsilon), dual.lambda));
      break;
  }
  if (entropy_weight > 0.0 && !instructions.front().distributions.empty()) {
    out.total = ops::sub(out.total,
                         ops::scale(usage_entropy(instructions), entropy_weight));
  }
  return out;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
    : order_(n), batch_(std::min(batch, n)), cursor_(n), rng_(seed) {
  if (n == 0) throw ContractError("BatchSampler: empty dataset");
  std::iota(order_.begin(), order_.end(), 0);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void write_train_log(const std::string& path,
                     std::span<const TrainLogRow> log) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write training log " + path);
  out.precision(17);
  out << "step,loss_rec,constraint,lambda,loss_total,grad_norm\n";
  for (const TrainLogRow& r : log) {
    out << r.step << ',' << r.loss_rec << ',' << r.constraint << ','
        << r.lambda << ',' << r.loss_total << ',' << r.grad_norm << '\n';
  }
}

namespace {

std::uint64_t stores_checksum(const PolicyModel& policy) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const ParameterStore* s : policy.stores()) {
    const std::uint64_t c = s->checksum();
    h = fnv1a_bytes(&c, sizeof(c), h);
  }
  return h;
}

void configure_strategy(PolicyModel& policy, const TrainConfig& config) {
  KnowledgeModel& lm = policy.lm();
  lm.freeze();
  if (config.strategy == Strategy::kLora) {
    if (!lm.has_lora()) lm.attach_lora(config.lora, config.seed + 77);
    for (Parameter* p : lm.adapter_params()) p->trainable = true;
  } else {
    for (Parameter* p : lm.adapter_params()) p->trainable = false;
  }
}

}  // namespace

TrainResult train(PolicyModel& policy, const GrModel& reference,
                  std::span<const Example> data, const TrainConfig& config,
                  const std::string& log_path) {
  config.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  configure_strategy(policy, config);
  TrainResult result;
  result.dual = config.dual;
  if (config.variant == Variant::kNoCons) result.dual.lambda = 0.0;
  result.reference_checksum_before = reference.params().checksum();

  const std::vector<double> s_ref =
      reference_scores(reference, policy.sids(), data);
  std::vector<Parameter*> params = policy.trainable();
  Optimizer opt(config.optimizer);
  BatchSampler sampler(data.size(), config.batch, config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  nn::RunMode mode{true, &dropout_rng};
  double initial = 0.0;

  auto abort_with = [&](const std::string& why) {
    if (!log_path.empty()) write_train_log(log_path, result.log);
    throw NumericError(why);
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<const Example*> batch;
    std::vector<double> refs;
    for (std::size_t i : sampler.next()) {
      batch.push_back(&data[i]);
      refs.push_back(s_ref[i]);
    }
    Graph g;
    BatchObjective obj = build_objective(g, policy, batch, refs, result.dual,
                                         config.variant, config.entropy_weight,
                                         mode);
    TrainLogRow row;
    row.step = step;
    row.loss_rec = obj.rec.item();
    row.constraint = obj.constraint.item();
    row.loss_total = obj.total.item();
    if (step == 0) initial = std::abs(row.loss_total);
    if (!std::isfinite(row.loss_total) ||
        std::abs(row.loss_total) > config.divergence_factor * initial) {
      result.log.push_back(row);
      abort_with("training diverged at step " + std::to_string(step) +
                 ": loss " + std::to_string(row.loss_total));
    }
    Gradients grads = g.backward(obj.total);
    opt.set_lr(scheduled_lr(config.schedule, config.optimizer.lr, step,
                            config.steps));
    try {
      row.grad_norm = opt.step(params, grads);
    } catch (const NumericError& e) {
      result.log.push_back(row);
      abort_with(e.what());
    }
    if (config.variant != Variant::kNoCons &&
        config.variant != Variant::kFixedBeta) {
      dual_step(result.dual, row.constraint);
    }
    row.lambda = config.variant == Variant::kFixedBeta ? 0.0 : result.dual.lambda;
    result.log.push_back(row);
  }
  result.reference_checksum_after = reference.params().checksum();
  if (result.reference_checksum_after != result.reference_checksum_before) {
    throw ContractError("train: reference weights changed");
  }
  result.checksum = stores_checksum(policy);
  if (!log_path.empty()) write_train_log(log_path, result.log);
  return result;
}

std::vector<double> train_reference(GrModel& model, const SidTable& sids,
                                    std::span<const Example> data,
                                    const ReferenceTrainConfig& config) {
  if (data.empty()) throw ContractError("train_reference: empty dataset");
  std::vector<Parameter*> params = model.params().trainable();
  Optimizer opt(config.optimizer);
  BatchSampler sampler(data.size(), config.batch, config.seed);
  std::vector<double> losses;
  losses.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Graph g;
    std::vector<Var> nlls;
    for (std::size_t i : sampler.next()) {
      const Example& ex = data[i];
      EncoderOutput enc = model.encode(g, ex.history, sids);
      nlls.push_back(
          model.nll(model.bos(g), model.memory(enc), sids.sequence(ex.target)));
    }
    Var loss = ops::scale(ops::sum(ops::concat_rows(nlls)),
                          1.0 / static_cast<double>(nlls.size()));
    losses.push_back(loss.item());
    opt.step(params, g.backward(loss));
  }
  return losses;
}

ToyResult solve_toy(double target, double x0, std::size_t steps, double lr,
                    DualState dual) {
  dual.validate();
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(x0));
  std::vector<Parameter*> params{&x};
  Optimizer opt({OptimizerKind::kSgd, lr, 0.9, 0.999, 1e-8, 0.0, 0.0});
  ToyResult r;
  for (std::size_t step = 0; step < steps; ++step) {
    Graph g;
    Var xv = g.param(x);
    Var diff = ops::add_scalar(xv, -target);
    Var rec = ops::mul(diff, diff);
    Var c = ops::max_const(ops::add_scalar(ops::scale(xv, -1.0), 1.0), 0.0);
    Var total =
        ops::add(rec, ops::scale(ops::add_scalar(c, -dual.epsilon), dual.lambda));
    TrainLogRow row;
    row.step = step;
    row.loss_rec = rec.item();
    row.constraint = c.item();
    row.loss_total = total.item();
    row.grad_norm = opt.step(params, g.backward(total));
    dual_step(dual, row.constraint);
    row.lambda = dual.lambda;
    r.log.push_back(row);
  }
  r.x = x.value[0];
  r.lambda = dual.lambda;
  r.constraint = std::max(0.0, 1.0 - r.x);
  return r;
}

}  // namespace kgr
