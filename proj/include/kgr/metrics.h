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

// Single-target ranking metrics.

#pragma once

#include <cstddef>
#include <span>

namespace kgr {

// 1 if |target| is within the first |k| entries of |ranked|, else 0.
double recall_at_k(std::span<const int> ranked, int target, std::size_t k);
// 1 / log2(rank + 1) for a 1-based rank <= k, else 0.
double ndcg_at_k(std::span<const int> ranked, int target, std::size_t k);

}  // namespace kgr
