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

#include "kgr/optim.h"

#include <cmath>
#include <numbers>

#include "kgr/errors.h"

namespace kgr {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adamw") return OptimizerKind::kAdamW;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adamw)");
}

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "linear") return LrSchedule::kLinear;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError("unknown lr schedule '" + name +
                    "' (expected constant|linear|cosine)");
}

const char* lr_schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::kConstant: return "constant";
    case LrSchedule::kLinear: return "linear";
    case LrSchedule::kCosine: return "cosine";
  }
  return "?";
}

double scheduled_lr(LrSchedule s, double base, std::size_t step,
                    std::size_t total) {
  if (s == LrSchedule::kConstant || total == 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  if (s == LrSchedule::kLinear) return base * (1.0 - frac);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double Optimizer::step(std::span<Parameter* const> params,
                       const Gradients& grads) {
  if (!grads.all_finite()) {
    std::string names;
    for (const auto& n : grads.non_finite_names()) names += " " + n;
    throw NumericError("non-finite gradient in:" + names);
  }
  const double norm = grads.norm(params);
  double clip = 1.0;
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
    clip = config_.clip_norm / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor* g = grads.find(p);
    if (g == nullptr) continue;
    double* w = p->value.data();
    const double* gv = g->data();
    const std::size_t n = p->value.size();
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < n; ++i) w[i] -= config_.lr * clip * gv[i];
      continue;
    }
    auto [it, inserted] = moments_.try_emplace(p);
    if (inserted) {
      it->second.m = Tensor(p->value.shape());
      it->second.v = Tensor(p->value.shape());
    }
    double* m = it->second.m.data();
    double* v = it->second.v.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = clip * gv[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                            config_.weight_decay * w[i]);
    }
  }
  return norm;
}

}  // namespace kgr
