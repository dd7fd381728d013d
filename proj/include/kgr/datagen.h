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

// Synthetic recommendation worlds with cohort-dependent knowledge alignment,
// plus the leave-one-out split.
//
// Every item belongs to a latent topic (its content vector is a noisy copy of
// the topic centre) and carries a second "hint" topic named in its text.
// Users of an aligned cohort tend to move next to the hinted topic, users of
// an anti-aligned cohort to a different per-item topic the text never
// mentions, so the same text helps one cohort and misleads the other.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgr/item_tokenizer.h"

namespace kgr {

struct CohortSpec {
  std::string name;
  std::size_t users = 500;
  double alignment = 1.0;  // in [-1, 1]
};

struct WorldSpec {
  std::size_t topics = 8;
  std::size_t items = 400;
  std::size_t content_dim = 24;
  std::size_t text_vocab = 256;
  std::size_t own_words = 3;    // text tokens naming the item's own topic
  std::size_t hint_words = 3;   // text tokens naming the hint topic
  std::size_t noise_words = 2;
  std::size_t min_interactions = 5;
  std::size_t max_interactions = 12;
  double follow_prob = 0.7;     // chance a step follows the item's link
  double preferred_mass = 0.8;  // cohort mass on its favourite topics
  std::size_t favourite_topics = 3;
  double zipf = 1.0;
  double centre_scale = 2.0;
  double content_noise = 0.5;
  std::vector<CohortSpec> cohorts = {{"c0", 500, 1.0},
                                     {"c1", 500, 1.0},
                                     {"c2", 500, 1.0},
                                     {"c3", 500, -1.0}};

  nlohmann::json to_json() const;
  static WorldSpec from_json(const nlohmann::json& j);
};

struct WorldItem {
  Item item;
  int topic = 0;
  int hint = 0;  // topic named by the text
  int anti = 0;  // topic anti-aligned users move to
};

struct User {
  std::string id;
  int cohort = 0;
  std::vector<int> items;  // catalog indices, chronological
};

struct SyntheticWorld {
  std::uint64_t seed = 0;
  WorldSpec spec;
  std::vector<WorldItem> items;
  std::vector<User> users;

  std::vector<Item> catalog() const;
  std::uint64_t checksum() const;
};

SyntheticWorld generate_world(const WorldSpec& spec, std::uint64_t seed);

void write_world(const std::string& path, const SyntheticWorld& world);
SyntheticWorld read_world(const std::string& path);

// Plug-in mutual information (nats) between the text tokens of an item and
// the latent topic of the item that follows it, over every transition of the
// world.
double text_topic_mutual_information(const SyntheticWorld& world);

// One supervised example: predict |target| from |history|.
struct Example {
  int user = 0;
  std::vector<int> history;
  int target = 0;
};

struct Split {
  std::vector<Example> train;       // every next-item step inside the train part
  std::vector<Example> validation;  // one per user
  std::vector<Example> test;        // one per user
  std::vector<std::vector<int>> train_sequences;  // train part per user
  std::size_t excluded_users = 0;
};

// Last item -> test, second to last -> validation, the rest -> train.
// Histories are truncated to the most recent |max_history| items.
Split leave_one_out_split(const SyntheticWorld& world, std::size_t max_history);

}  // namespace kgr
