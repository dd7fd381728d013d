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

#pragma once

#include <span>
#include <string>
#include <unordered_map>

#include "kgr/graph.h"

namespace kgr {

enum class OptimizerKind { kSgd, kAdamW };

OptimizerKind parse_optimizer(const std::string& name);

enum class LrSchedule { kConstant, kLinear, kCosine };
LrSchedule parse_lr_schedule(const std::string& name);
const char* lr_schedule_name(LrSchedule s);
// Learning rate at |step| of |total| decaying from |base| to zero.
double scheduled_lr(LrSchedule s, double base, std::size_t step,
                    std::size_t total);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global L2 clipping threshold; <= 0 disables clipping.
  double clip_norm = 1.0;
};

// First-order update over a fixed parameter list. AdamW decay is decoupled.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // Applies one update and returns the pre-clipping gradient norm. Throws
  // NumericError naming the offending parameters if any gradient is
  // non-finite; parameters are left untouched in that case.
  double step(std::span<Parameter* const> params, const Gradients& grads);

  const OptimizerConfig& config() const { return config_; }
  // Learning rate for subsequent steps (schedules call this every step).
  void set_lr(double lr) { config_.lr = lr; }
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  OptimizerConfig config_;
  std::unordered_map<const Parameter*, Moments> moments_;
  long t_ = 0;
};

}  // namespace kgr
