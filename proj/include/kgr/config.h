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

// Run configuration: one nested JSON document covering every module. User
// files and --set overrides are merged into the defaults; any key the
// defaults do not declare is rejected.

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/experiment.h"
#include "kgr/serving.h"

namespace kgr {

struct RunConfig {
  ExperimentConfig experiment;
  ServingConfig serving;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Merges |user| into |base| in place. Objects merge recursively; any other
// value replaces the default. ConfigError names the dotted path of the first
// key |base| does not declare.
void merge_strict(nlohmann::json& base, const nlohmann::json& user,
                  const std::string& path = "");

// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
// as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Defaults, then the file at |path| (when non-empty), then |overrides|.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides,
                          nlohmann::json* resolved = nullptr);

// 16 hex digits of FNV-1a over the canonical dump of |resolved| without its
// seed. Object keys are sorted, so the hash ignores key order in the file.
std::string config_hash(const nlohmann::json& resolved);

// <base>/<hash>-seed<seed>.
std::string run_directory(const std::string& base, const std::string& hash,
                          std::uint64_t seed);

// Value of KGR_RUN_ROOT, or "runs" when unset.
std::string base_output_dir();

}  // namespace kgr
