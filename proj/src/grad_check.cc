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

#include "kgr/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kgr/errors.h"

namespace kgr {

GradCheckResult grad_check(const LossFn& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("grad_check: step must be > 0");

  ConstantTape tape(ConstantTape::Mode::kRecord);
  Gradients analytic;
  double base = 0.0;
  {
    Graph g;
    g.set_constant_tape(&tape);
    Var loss = f(g);
    base = loss.item();
    analytic = g.backward(loss);
  }
  {
    ConstantTape again(ConstantTape::Mode::kRecord);
    Graph g;
    g.set_constant_tape(&again);
    if (f(g).item() != base) {
      throw ContractError("grad_check: loss function is not deterministic");
    }
  }

  tape.set_mode(ConstantTape::Mode::kReplay);
  auto evaluate = [&]() {
    tape.set_mode(ConstantTape::Mode::kReplay);
    Graph g;
    g.set_constant_tape(&tape);
    return f(g).item();
  };

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor a = analytic.get(*p);
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 &&
        coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : coords) {
      const double orig = p->value[i];
      p->value[i] = orig + options.step;
      const double plus = evaluate();
      p->value[i] = orig - options.step;
      const double minus = evaluate();
      p->value[i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      diff2 += (a[i] - numeric) * (a[i] - numeric);
      a2 += a[i] * a[i];
      n2 += numeric * numeric;
    }
    result.coords_checked += coords.size();
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    const double err =
        denom < options.abs_floor ? 0.0 : std::sqrt(diff2) / denom;
    result.per_param.emplace_back(p->name(), err);
    if (result.worst_param.empty() || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_param = p->name();
    }
  }
  return result;
}

}  // namespace kgr
