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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kgr/graph.h"

namespace kgr {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  // Norm below which a gradient counts as zero when forming relative errors.
  double abs_floor = 1e-7;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<std::pair<std::string, double>> per_param;
  std::size_t coords_checked = 0;
};

// Builds the scalar loss inside the graph it is given.
using LossFn = std::function<Var(Graph&)>;

// Compares reverse-mode gradients against central differences, coordinate by
// coordinate, for every trainable parameter in |params|. Stop-gradient values
// and hard selections are recorded at the base point and replayed during the
// perturbed passes, so the check targets the surrogate those operators define.
// Per-parameter error is ||analytic - numeric|| / max(||analytic||,
// ||numeric||), reported as 0 when both norms are below |abs_floor|.
GradCheckResult grad_check(const LossFn& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace kgr
