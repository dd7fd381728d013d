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

// JSON checkpoint container: a free-form header plus named parameter arrays
// with their shapes.

#pragma once

#include <span>
#include <string>

#include "json.hpp"
#include "kgr/graph.h"

namespace kgr {

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     std::span<const ParameterStore* const> stores);

// Loads values by name into every listed store. Throws LookupError for a
// parameter missing from the file and ContractError on a shape mismatch.
// Returns the header.
nlohmann::json load_checkpoint(const std::string& path,
                               std::span<ParameterStore* const> stores);

// Reads only the header.
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace kgr
