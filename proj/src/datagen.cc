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

#include "kgr/datagen.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "kgr/errors.h"

namespace kgr {
namespace {

constexpr int kNoiseTokens = 16;
constexpr int kBlock = 8;  // words per topic for each of own/hint blocks

int own_word(int topic, int j) { return kNoiseTokens + topic * 2 * kBlock + j; }
int hint_word(int topic, int j) {
  return kNoiseTokens + topic * 2 * kBlock + kBlock + j;
}

void validate(const WorldSpec& s) {
  auto fail = [](const std::string& m) { throw ConfigError("world spec: " + m); };
  if (s.cohorts.empty()) fail("need at least one cohort");
  if (s.topics < 3) fail("need at least 3 topics");
  if (s.items < 2 * s.topics) fail("need at least 2 items per topic");
  if (s.content_dim == 0) fail("content_dim must be positive");
  if (static_cast<std::size_t>(kNoiseTokens) + 2 * kBlock * s.topics > s.text_vocab) {
    fail("text_vocab too small for " + std::to_string(s.topics) + " topics");
  }
  if (s.own_words + s.hint_words + s.noise_words == 0) fail("empty item text");
  if (s.min_interactions < 3 || s.max_interactions < s.min_interactions) {
    fail("interaction range must satisfy 3 <= min <= max");
  }
  if (s.favourite_topics == 0 || s.favourite_topics > s.topics) {
    fail("favourite_topics must be in [1, topics]");
  }
  if (s.follow_prob < 0 || s.follow_prob > 1) fail("follow_prob outside [0, 1]");
  if (s.preferred_mass < 0 || s.preferred_mass > 1) fail("preferred_mass outside [0, 1]");
  for (const auto& c : s.cohorts) {
    if (c.alignment < -1 || c.alignment > 1) fail("alignment outside [-1, 1]");
    if (c.users == 0) fail("cohort " + c.name + " has no users");
  }
}

}  // namespace

nlohmann::json WorldSpec::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cohorts) {
    cs.push_back({{"name", c.name}, {"users", c.users}, {"alignment", c.alignment}});
  }
  return {{"topics", topics},
          {"items", items},
          {"content_dim", content_dim},
          {"text_vocab", text_vocab},
          {"own_words", own_words},
          {"hint_words", hint_words},
          {"noise_words", noise_words},
          {"min_interactions", min_interactions},
          {"max_interactions", max_interactions},
          {"follow_prob", follow_prob},
          {"preferred_mass", preferred_mass},
          {"favourite_topics", favourite_topics},
          {"zipf", zipf},
          {"centre_scale", centre_scale},
          {"content_noise", content_noise},
          {"cohorts", cs}};
}

WorldSpec WorldSpec::from_json(const nlohmann::json& j) {
  WorldSpec s;
  s.topics = j.at("topics");
  s.items = j.at("items");
  s.content_dim = j.at("content_dim");
  s.text_vocab = j.at("text_vocab");
  s.own_words = j.at("own_words");
  s.hint_words = j.at("hint_words");
  s.noise_words = j.at("noise_words");
  s.min_interactions = j.at("min_interactions");
  s.max_interactions = j.at("max_interactions");
  s.follow_prob = j.at("follow_prob");
  s.preferred_mass = j.at("preferred_mass");
  s.favourite_topics = j.at("favourite_topics");
  s.zipf = j.at("zipf");
  s.centre_scale = j.at("centre_scale");
  s.content_noise = j.at("content_noise");
  s.cohorts.clear();
  for (const auto& c : j.at("cohorts")) {
    s.cohorts.push_back({c.at("name"), c.at("users"), c.at("alignment")});
  }
  return s;
}

std::vector<Item> SyntheticWorld::catalog() const {
  std::vector<Item> out;
  out.reserve(items.size());
  for (const auto& w : items) out.push_back(w.item);
  return out;
}

SyntheticWorld generate_world(const WorldSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  const int T = static_cast<int>(spec.topics);
  SyntheticWorld w;
  w.seed = seed;
  w.spec = spec;

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> centre(T, std::vector<double>(spec.content_dim));
  for (auto& c : centre) {
    for (double& v : c) v = spec.centre_scale * normal(rng);
  }

  std::vector<std::vector<int>> by_topic(T);
  std::uniform_int_distribution<int> word(0, kBlock - 1);
  std::uniform_int_distribution<int> noise(0, kNoiseTokens - 1);
  const int width = static_cast<int>(std::log10(static_cast<double>(spec.items))) + 1;
  for (std::size_t i = 0; i < spec.items; ++i) {
    WorldItem it;
    it.topic = static_cast<int>(i % spec.topics);
    // Hint and anti topics: two distinct topics different from the own one.
    std::vector<int> others;
    for (int t = 0; t < T; ++t) {
      if (t != it.topic) others.push_back(t);
    }
    std::shuffle(others.begin(), others.end(), rng);
    it.hint = others[0];
    it.anti = others[1];
    std::string id = std::to_string(i);
    it.item.id = "i" + std::string(width - id.size(), '0') + id;
    it.item.content.resize(spec.content_dim);
    for (std::size_t j = 0; j < spec.content_dim; ++j) {
      it.item.content[j] = centre[it.topic][j] + spec.content_noise * normal(rng);
    }
    for (std::size_t j = 0; j < spec.own_words; ++j) {
      it.item.text_tokens.push_back(own_word(it.topic, word(rng)));
    }
    for (std::size_t j = 0; j < spec.hint_words; ++j) {
      it.item.text_tokens.push_back(hint_word(it.hint, word(rng)));
    }
    for (std::size_t j = 0; j < spec.noise_words; ++j) {
      it.item.text_tokens.push_back(noise(rng));
    }
    by_topic[it.topic].push_back(static_cast<int>(i));
    w.items.push_back(std::move(it));
  }

  // Zipf popularity over a random order within each topic.
  std::vector<std::discrete_distribution<int>> popularity;
  for (auto& members : by_topic) {
    std::shuffle(members.begin(), members.end(), rng);
    std::vector<double> weights;
    for (std::size_t r = 0; r < members.size(); ++r) {
      weights.push_back(1.0 / std::pow(static_cast<double>(r + 1), spec.zipf));
    }
    popularity.emplace_back(weights.begin(), weights.end());
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.min_interactions,
                                                    spec.max_interactions);
  std::size_t serial = 0;
  for (std::size_t c = 0; c < spec.cohorts.size(); ++c) {
    const CohortSpec& cohort = spec.cohorts[c];
    // Favourite topics rotate with the cohort index.
    std::vector<double> pref(T, (1.0 - spec.preferred_mass) /
                                    static_cast<double>(T - spec.favourite_topics));
    if (spec.favourite_topics == spec.topics) pref.assign(T, 1.0 / T);
    for (std::size_t j = 0; j < spec.favourite_topics && spec.favourite_topics < spec.topics; ++j) {
      pref[(2 * c + j) % T] =
          spec.preferred_mass / static_cast<double>(spec.favourite_topics);
    }
    std::discrete_distribution<int> interest(pref.begin(), pref.end());
    const double follow = spec.follow_prob * std::abs(cohort.alignment);
    for (std::size_t u = 0; u < cohort.users; ++u) {
      User user;
      user.id = "u" + std::to_string(serial++);
      user.cohort = static_cast<int>(c);
      const std::size_t n = length(rng);
      int topic = interest(rng);
      while (user.items.size() < n) {
        int item = by_topic[topic][popularity[topic](rng)];
        // Avoid repeats where the topic allows it.
        for (int tries = 0; tries < 10 &&
                            std::find(user.items.begin(), user.items.end(), item) !=
                                user.items.end();
             ++tries) {
          item = by_topic[topic][popularity[topic](rng)];
        }
        user.items.push_back(item);
        const WorldItem& cur = w.items[item];
        if (unit(rng) < follow) {
          topic = cohort.alignment > 0 ? cur.hint : cur.anti;
        } else {
          topic = interest(rng);
        }
      }
      w.users.push_back(std::move(user));
    }
  }
  return w;
}

std::uint64_t SyntheticWorld::checksum() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["spec"] = spec.to_json();
  std::uint64_t h = 14695981039346656037ULL;
  const std::string head = j.dump();
  h = fnv1a_bytes(head.data(), head.size(), h);
  for (const auto& it : items) {
    h = fnv1a(it.item.content, h);
    h = fnv1a_bytes(it.item.text_tokens.data(),
                    it.item.text_tokens.size() * sizeof(int), h);
    const int meta[3] = {it.topic, it.hint, it.anti};
    h = fnv1a_bytes(meta, sizeof(meta), h);
  }
  for (const auto& u : users) {
    h = fnv1a_bytes(&u.cohort, sizeof(int), h);
    h = fnv1a_bytes(u.items.data(), u.items.size() * sizeof(int), h);
  }
  return h;
}

void write_world(const std::string& path, const SyntheticWorld& world) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write world " + path);
  out << nlohmann::json{{"type", "header"},
                        {"seed", world.seed},
                        {"spec", world.spec.to_json()},
                        {"items", world.items.size()},
                        {"users", world.users.size()}}
             .dump()
      << '\n';
  for (const auto& it : world.items) {
    out << nlohmann::json{{"type", "item"},
                          {"item_id", it.item.id},
                          {"topic", it.topic},
                          {"hint", it.hint},
                          {"anti", it.anti},
                          {"content", it.item.content},
                          {"text_tokens", it.item.text_tokens}}
               .dump()
        << '\n';
  }
  for (const auto& u : world.users) {
    out << nlohmann::json{{"type", "user"},
                          {"user_id", u.id},
                          {"cohort", u.cohort},
                          {"interactions", u.items}}
               .dump()
        << '\n';
  }
}

SyntheticWorld read_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("world file not found: " + path);
  SyntheticWorld w;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    const std::string type = j.at("type");
    if (type == "header") {
      w.seed = j.at("seed");
      w.spec = WorldSpec::from_json(j.at("spec"));
      header = true;
    } else if (type == "item") {
      WorldItem it;
      it.item.id = j.at("item_id");
      it.item.content = j.at("content").get<std::vector<double>>();
      it.item.text_tokens = j.at("text_tokens").get<std::vector<int>>();
      it.topic = j.at("topic");
      it.hint = j.at("hint");
      it.anti = j.at("anti");
      w.items.push_back(std::move(it));
    } else if (type == "user") {
      User u;
      u.id = j.at("user_id");
      u.cohort = j.at("cohort");
      u.items = j.at("interactions").get<std::vector<int>>();
      for (int i : u.items) {
        if (i < 0 || static_cast<std::size_t>(i) >= w.items.size()) {
          throw LookupError("world: user " + u.id + " references item " +
                            std::to_string(i));
        }
      }
      w.users.push_back(std::move(u));
    } else {
      throw ContractError("world: unknown record type " + type);
    }
  }
  if (!header) throw ContractError("world: missing header record");
  return w;
}

double text_topic_mutual_information(const SyntheticWorld& world) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  double total = 0;
  for (const auto& u : world.users) {
    for (std::size_t t = 0; t + 1 < u.items.size(); ++t) {
      const int next_topic = world.items[u.items[t + 1]].topic;
      for (int tok : world.items[u.items[t]].item.text_tokens) {
        joint[{tok, next_topic}] += 1;
        px[tok] += 1;
        py[next_topic] += 1;
        total += 1;
      }
    }
  }
  double mi = 0;
  for (const auto& [k, c] : joint) {
    mi += (c / total) * std::log(c * total / (px[k.first] * py[k.second]));
  }
  return mi;
}

Split leave_one_out_split(const SyntheticWorld& world,
                          std::size_t max_history) {
  if (max_history == 0) throw ConfigError("max_history must be positive");
  Split s;
  auto window = [&](const std::vector<int>& items, std::size_t end) {
    const std::size_t begin = end > max_history ? end - max_history : 0;
    return std::vector<int>(items.begin() + begin, items.begin() + end);
  };
  for (std::size_t u = 0; u < world.users.size(); ++u) {
    const auto& items = world.users[u].items;
    if (items.size() < 3) {
      ++s.excluded_users;
      continue;
    }
    const int uid = static_cast<int>(u);
    const std::size_t n = items.size();
    s.train_sequences.emplace_back(items.begin(), items.end() - 2);
    for (std::size_t t = 1; t + 2 < n; ++t) {
      s.train.push_back({uid, window(items, t), items[t]});
    }
    s.validation.push_back({uid, window(items, n - 2), items[n - 2]});
    s.test.push_back({uid, window(items, n - 1), items[n - 1]});
  }
  return s;
}

}  // namespace kgr
