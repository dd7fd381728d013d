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

#include "kgr/metrics.h"

#include <cmath>
#include <unordered_set>

#include "kgr/errors.h"

namespace kgr {
namespace {

// 1-based rank of |target| within the first |k| entries, or 0.
std::size_t rank_within(std::span<const int> ranked, int target,
                        std::size_t k) {
  if (k == 0) throw ContractError("metrics: k must be >= 1");
  std::unordered_set<int> seen;
  std::size_t rank = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!seen.insert(ranked[i]).second) {
      throw ContractError("metrics: duplicate item " + std::to_string(ranked[i]) +
                          " in ranked list");
    }
    if (rank == 0 && ranked[i] == target && i < k) rank = i + 1;
  }
  return rank;
}

}  // namespace

double recall_at_k(std::span<const int> ranked, int target, std::size_t k) {
  return rank_within(ranked, target, k) > 0 ? 1.0 : 0.0;
}

double ndcg_at_k(std::span<const int> ranked, int target, std::size_t k) {
  const std::size_t r = rank_within(ranked, target, k);
  return r == 0 ? 0.0 : 1.0 / std::log2(static_cast<double>(r) + 1.0);
}

}  // namespace kgr
