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

#include "kgr/config.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "kgr/errors.h"

namespace kgr {

using nlohmann::json;

json RunConfig::to_json() const {
  json j = experiment.to_json();
  j["serving"] = serving.to_json();
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.experiment = ExperimentConfig::from_json(j);
    c.serving = ServingConfig::from_json(j.at("serving"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.serving.seed = c.experiment.seed;
  return c;
}

void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") +
                      " must be an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // Build the nested object for the dotted key and merge it strictly.
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part =
        key.substr(dot == std::string::npos ? 0 : dot + 1,
                   end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_strict(config, patch);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides,
                          json* resolved) {
  json j = RunConfig{}.to_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing config file " + path);
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
    merge_strict(j, user);
  }
  for (const std::string& o : overrides) apply_override(j, o);
  RunConfig c = RunConfig::from_json(j);
  if (resolved != nullptr) *resolved = c.to_json();
  return c;
}

std::string config_hash(const json& resolved) {
  json copy = resolved;
  copy.erase("seed");
  const std::string text = copy.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_bytes(text.data(), text.size())));
  return buf;
}

std::string run_directory(const std::string& base, const std::string& hash,
                          std::uint64_t seed) {
  return base + "/" + hash + "-seed" + std::to_string(seed);
}

std::string base_output_dir() {
  const char* env = std::getenv("KGR_RUN_ROOT");
  return env != nullptr && *env != '\0' ? env : "runs";
}

}  // namespace kgr
