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

#include "kgr/checkpoint.h"

#include <fstream>

#include "kgr/errors.h"

namespace kgr {
namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("checkpoint not found: " + path);
  return nlohmann::json::parse(in);
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     std::span<const ParameterStore* const> stores) {
  nlohmann::json j;
  j["header"] = header;
  nlohmann::json& params = j["params"];
  params = nlohmann::json::object();
  for (const ParameterStore* s : stores) {
    for (const Parameter* p : s->all()) {
      if (params.contains(p->name())) {
        throw ContractError("save_checkpoint: duplicate parameter " + p->name());
      }
      params[p->name()] = {{"shape", {p->value.rows(), p->value.cols()}},
                           {"values", p->value.values()}};
    }
  }
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write checkpoint " + path);
  // Full round-trip precision for doubles.
  out << j.dump();
}

nlohmann::json load_checkpoint(const std::string& path,
                               std::span<ParameterStore* const> stores) {
  const nlohmann::json j = read_json(path);
  const auto& params = j.at("params");
  for (ParameterStore* s : stores) {
    for (Parameter* p : s->all()) {
      auto it = params.find(p->name());
      if (it == params.end()) {
        throw LookupError("checkpoint " + path + " has no parameter " +
                          p->name());
      }
      const auto shape = it->at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p->value.rows() ||
          shape[1] != p->value.cols()) {
        throw ContractError("checkpoint shape mismatch for " + p->name() +
                            ": expected " + p->value.shape().str());
      }
      p->value = Tensor(p->value.shape(),
                        it->at("values").get<std::vector<double>>());
    }
  }
  return j.at("header");
}

nlohmann::json read_checkpoint_header(const std::string& path) {
  return read_json(path).at("header");
}

}  // namespace kgr
