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

#include "kgr/serving.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include "kgr/errors.h"

namespace kgr {

// ---------------------------------------------------------------- repository

KnowledgeRepository::KnowledgeRepository(KnowledgeMatrix default_knowledge) {
  auto e = std::make_shared<KnowledgeEntry>();
  e->value_checksum = fnv1a(default_knowledge.h.span());
  e->knowledge = std::move(default_knowledge);
  default_ = std::move(e);
}

std::shared_ptr<const KnowledgeEntry> KnowledgeRepository::lookup(
    const std::string& user) const {
  lookups_.fetch_add(1);
  std::shared_lock lock(mu_);
  auto it = entries_.find(user);
  return it == entries_.end() ? nullptr : it->second;
}

std::shared_ptr<const KnowledgeEntry> KnowledgeRepository::peek(
    const std::string& user) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(user);
  return it == entries_.end() ? nullptr : it->second;
}

std::uint64_t KnowledgeRepository::publish(const std::string& user,
                                           KnowledgeMatrix knowledge,
                                           std::uint64_t fingerprint,
                                           double refreshed_at, double now) {
  if (refreshed_at > now) {
    throw ContractError("publish: refreshed_at lies in the future");
  }
  auto e = std::make_shared<KnowledgeEntry>();
  e->value_checksum = fnv1a(knowledge.h.span());
  e->knowledge = std::move(knowledge);
  e->fingerprint = fingerprint;
  e->refreshed_at = refreshed_at;
  std::unique_lock lock(mu_);
  auto& slot = entries_[user];
  if (slot && slot->refreshed_at > refreshed_at) {
    throw ContractError("publish: entry for " + user + " is newer");
  }
  e->version = slot ? slot->version + 1 : 1;
  const std::uint64_t v = e->version;
  slot = std::move(e);
  return v;
}

void KnowledgeRepository::confirm(const std::string& user, double refreshed_at,
                                  double now) {
  if (refreshed_at > now) {
    throw ContractError("confirm: refreshed_at lies in the future");
  }
  std::unique_lock lock(mu_);
  auto it = entries_.find(user);
  if (it == entries_.end()) throw LookupError("confirm: no entry for " + user);
  if (it->second->refreshed_at >= refreshed_at) return;
  auto e = std::make_shared<KnowledgeEntry>(*it->second);
  e->refreshed_at = refreshed_at;
  it->second = std::move(e);
}

std::size_t KnowledgeRepository::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------- clock

void SimClock::schedule(double time, Kind kind, std::size_t payload) {
  if (time < now_) throw ContractError("SimClock: event scheduled in the past");
  queue_.push({time, seq_++, kind, payload});
}

SimClock::Event SimClock::pop() {
  if (queue_.empty()) throw ContractError("SimClock: no pending events");
  Event e = queue_.top();
  queue_.pop();
  now_ = e.time;
  return e;
}

// ---------------------------------------------------------------- config

nlohmann::json ServingConfig::to_json() const {
  return {{"refresh_period_ms", refresh_period_ms},
          {"refresh_batch", refresh_batch},
          {"refresh_cost_ms", refresh_cost_ms},
          {"check_cost_ms", check_cost_ms},
          {"lookup_ms", lookup_ms},
          {"encode_ms", encode_ms},
          {"fusion_ms", fusion_ms},
          {"decode_step_ms", decode_step_ms},
          {"k", k},
          {"beam", beam},
          {"cold_start_bypass", cold_start_bypass},
          {"requests", requests},
          {"mean_interarrival_ms", mean_interarrival_ms},
          {"click_prob", click_prob},
          {"new_user_fraction", new_user_fraction}};
}

ServingConfig ServingConfig::from_json(const nlohmann::json& j) {
  ServingConfig c;
  c.refresh_period_ms = j.at("refresh_period_ms");
  c.refresh_batch = j.at("refresh_batch");
  c.refresh_cost_ms = j.at("refresh_cost_ms");
  c.check_cost_ms = j.at("check_cost_ms");
  c.lookup_ms = j.at("lookup_ms");
  c.encode_ms = j.at("encode_ms");
  c.fusion_ms = j.at("fusion_ms");
  c.decode_step_ms = j.at("decode_step_ms");
  c.k = j.at("k");
  c.beam = j.at("beam");
  c.cold_start_bypass = j.at("cold_start_bypass");
  c.requests = j.at("requests");
  c.mean_interarrival_ms = j.at("mean_interarrival_ms");
  c.click_prob = j.at("click_prob");
  c.new_user_fraction = j.at("new_user_fraction");
  if (c.refresh_batch == 0) throw ConfigError("serving.refresh_batch must be >= 1");
  if (c.beam < c.k) throw ConfigError("serving.beam must be >= serving.k");
  if (c.mean_interarrival_ms <= 0) {
    throw ConfigError("serving.mean_interarrival_ms must be > 0");
  }
  return c;
}

nlohmann::json RequestTrace::to_json() const {
  return {{"user_id", user_id},
          {"arrival_ms", arrival_ms},
          {"lookup_count", lookup_count},
          {"knowledge_version", knowledge_version},
          {"staleness_ms", staleness_ms},
          {"llm_forward_count", llm_forward_count},
          {"fusion_count", fusion_count},
          {"latency_ms", latency_ms},
          {"cold_start", cold_start},
          {"fresh", fresh},
          {"top_k", top_k}};
}

std::uint64_t context_fingerprint(const std::vector<int>& history) {
  return fnv1a_bytes(history.data(), history.size() * sizeof(int));
}

// ---------------------------------------------------------------- nearline

namespace {

struct RefreshWork {
  std::string user;
  bool recompute = false;
  KnowledgeMatrix knowledge;
  std::uint64_t fingerprint = 0;
};

// Decides per user whether to recompute or confirm, computing matrices from
// the context as of now. Reads the repository without counting lookups.
std::vector<RefreshWork> plan_refresh(
    const std::vector<std::pair<std::string, std::vector<int>>>& users,
    const std::map<std::string, std::uint64_t>& built_from,
    const PolicyModel& policy, std::size_t* failures) {
  std::vector<RefreshWork> out;
  for (const auto& [user, history] : users) {
    RefreshWork w;
    w.user = user;
    w.fingerprint = context_fingerprint(history);
    auto it = built_from.find(user);
    w.recompute = it == built_from.end() || it->second != w.fingerprint;
    if (w.recompute) {
      try {
        w.knowledge = policy.compute_knowledge(history);
      } catch (const std::exception&) {
        if (failures != nullptr) ++*failures;
        continue;
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

void apply_refresh(std::vector<RefreshWork>& work, double refreshed_at,
                   double now, KnowledgeRepository& repo,
                   std::map<std::string, std::uint64_t>& built_from) {
  for (RefreshWork& w : work) {
    if (w.recompute) {
      repo.publish(w.user, std::move(w.knowledge), w.fingerprint, refreshed_at, now);
      built_from[w.user] = w.fingerprint;
    } else {
      repo.confirm(w.user, refreshed_at, now);
    }
  }
}

std::map<std::string, std::uint64_t> fingerprints_of(
    const KnowledgeRepository& repo,
    const std::vector<std::pair<std::string, std::vector<int>>>& users) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& entry : users) {
    if (auto e = repo.peek(entry.first)) out[entry.first] = e->fingerprint;
  }
  return out;
}

}  // namespace

std::size_t nearline_refresh(
    const std::vector<std::pair<std::string, std::vector<int>>>& users,
    double now, KnowledgeRepository& repo, const PolicyModel& policy,
    std::size_t* failures) {
  auto built_from = fingerprints_of(repo, users);
  auto work = plan_refresh(users, built_from, policy, failures);
  std::size_t n = 0;
  for (const auto& w : work) n += w.recompute ? 1 : 0;
  apply_refresh(work, now, now, repo, built_from);
  return n;
}

// ---------------------------------------------------------------- online

RequestTrace serve_request(const std::string& user_id,
                           const std::vector<int>& history, double now,
                           const KnowledgeRepository& repo,
                           const PolicyModel& policy, const PrefixTrie& trie,
                           const std::vector<Item>& catalog,
                           const ServingConfig& config,
                           std::vector<int>* ranked,
                           std::shared_ptr<const KnowledgeEntry>* used) {
  const std::uint64_t lookups0 = repo.lookup_count();
  const std::uint64_t llm0 = policy.lm().forward_count();
  const std::uint64_t fus0 = policy.fusion().fusion_count();

  RequestTrace t;
  t.user_id = user_id;
  t.arrival_ms = now;
  std::shared_ptr<const KnowledgeEntry> entry = repo.lookup(user_id);
  t.cold_start = entry == nullptr;
  if (t.cold_start) entry = repo.default_entry();
  t.knowledge_version = entry->version;
  t.staleness_ms = now - entry->refreshed_at;
  t.fresh = !t.cold_start && entry->fingerprint == context_fingerprint(history);

  static const Tensor kEmpty;
  const Tensor& h =
      t.cold_start && config.cold_start_bypass ? kEmpty : entry->knowledge.h;
  Graph g;
  g.set_grad_enabled(false);
  PolicyForward f = policy.forward_cached(g, history, h);
  auto top = policy.gr().generate_topk(f.start, f.memory, config.k, config.beam, trie);

  t.lookup_count = repo.lookup_count() - lookups0;
  t.llm_forward_count = policy.lm().forward_count() - llm0;
  t.fusion_count = policy.fusion().fusion_count() - fus0;
  t.latency_ms = config.lookup_ms * static_cast<double>(t.lookup_count) +
                 config.encode_ms +
                 config.fusion_ms * static_cast<double>(t.fusion_count) +
                 config.decode_step_ms *
                     static_cast<double>(policy.gr().config().levels());
  if (used != nullptr) *used = entry;
  if (ranked != nullptr) ranked->clear();
  for (const RankedItem& r : top) {
    t.top_k.push_back(catalog.at(r.item).id);
    if (ranked != nullptr) ranked->push_back(r.item);
  }
  return t;
}

// ---------------------------------------------------------------- workload

std::vector<WorkloadEntry> make_workload(const SyntheticWorld& world,
                                         const ServingConfig& config) {
  if (world.users.empty()) throw ContractError("make_workload: no users");
  std::mt19937_64 rng(config.seed + 17);
  std::exponential_distribution<double> gap(1.0 / config.mean_interarrival_ms);
  std::uniform_int_distribution<std::size_t> pick(0, world.users.size() - 1);
  std::vector<WorkloadEntry> out;
  out.reserve(config.requests);
  double t = 0.0;
  for (std::size_t i = 0; i < config.requests; ++i) {
    t += gap(rng);
    out.push_back({std::round(t * 1000.0) / 1000.0, world.users[pick(rng)].id});
  }
  return out;
}

void write_workload(const std::string& path,
                    const std::vector<WorkloadEntry>& w) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write workload " + path);
  out.precision(17);
  out << "time_ms,user_id\n";
  for (const auto& e : w) out << e.time_ms << ',' << e.user_id << '\n';
}

std::vector<WorkloadEntry> read_workload(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing workload " + path);
  std::string line;
  std::getline(in, line);
  if (line != "time_ms,user_id") {
    throw ContractError("workload " + path + " has an unexpected header");
  }
  std::vector<WorkloadEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ContractError("bad workload line: " + line);
    out.push_back({std::stod(line.substr(0, comma)), line.substr(comma + 1)});
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].time_ms < out[i - 1].time_ms) {
      throw ContractError("workload is not sorted by time");
    }
  }
  return out;
}

// ---------------------------------------------------------------- scenario

namespace {

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size(), std::max<std::size_t>(rank, 1)) - 1];
}

}  // namespace

void serving_population(const SyntheticWorld& world, const Split& split,
                        const ServingConfig& config,
                        std::map<std::string, std::vector<int>>* histories,
                        std::vector<std::string>* initially_known) {
  histories->clear();
  initially_known->clear();
  for (const Example& ex : split.test) {
    (*histories)[world.users[ex.user].id] = ex.history;
  }
  std::vector<std::string> ids;
  for (const auto& [id, h] : *histories) ids.push_back(id);
  std::mt19937_64 rng(config.seed + 29);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto fresh = static_cast<std::size_t>(
      std::llround(config.new_user_fraction * static_cast<double>(ids.size())));
  initially_known->assign(ids.begin() + std::min(fresh, ids.size()), ids.end());
  std::sort(initially_known->begin(), initially_known->end());
}

ScenarioResult run_scenario(
    const std::vector<WorkloadEntry>& workload,
    std::map<std::string, std::vector<int>> histories,
    const std::vector<std::string>& initially_known, const PolicyModel& policy,
    const PrefixTrie& trie, const std::vector<Item>& catalog,
    std::size_t max_history, const ServingConfig& config) {
  for (std::size_t i = 1; i < workload.size(); ++i) {
    if (workload[i].time_ms < workload[i - 1].time_ms) {
      throw ContractError("run_scenario: workload not sorted by time");
    }
  }
  ScenarioResult result;
  KnowledgeRepository repo(policy.default_knowledge());
  SimClock clock;
  std::mt19937_64 rng(config.seed + 41);
  std::bernoulli_distribution click(config.click_prob);
  std::map<std::string, std::uint64_t> built_from;
  std::set<std::string> known(initially_known.begin(), initially_known.end());
  std::size_t failures = 0, recomputed = 0, confirmed = 0, passes = 0;

  auto snapshot = [&](const std::set<std::string>& who) {
    std::vector<std::pair<std::string, std::vector<int>>> users;
    for (const std::string& u : who) users.emplace_back(u, histories.at(u));
    return users;
  };

  // Warm-up before serving opens: every initially known user gets version 1.
  {
    auto work = plan_refresh(snapshot(known), built_from, policy, &failures);
    for (const auto& w : work) recomputed += w.recompute ? 1 : 0;
    apply_refresh(work, 0.0, 0.0, repo, built_from);
  }

  for (std::size_t i = 0; i < workload.size(); ++i) {
    clock.schedule(workload[i].time_ms, SimClock::Kind::kRequest, i);
  }
  const double horizon = workload.empty() ? 0.0 : workload.back().time_ms;
  const bool periodic =
      config.refresh_period_ms > 0.0 && std::isfinite(config.refresh_period_ms);
  if (periodic && config.refresh_period_ms <= horizon) {
    clock.schedule(config.refresh_period_ms, SimClock::Kind::kRefresh);
  }

  struct Batch {
    double start = 0.0;
    std::vector<RefreshWork> work;
  };
  std::vector<Batch> batches;
  std::vector<double> latencies, staleness;

  while (!clock.empty()) {
    const SimClock::Event ev = clock.pop();
    const double now = clock.now();
    if (ev.kind == SimClock::Kind::kRequest) {
      const std::string& user = workload[ev.payload].user_id;
      auto hit = histories.find(user);
      if (hit == histories.end()) {
        throw LookupError("run_scenario: no history for user " + user);
      }
      known.insert(user);  // picked up by the next refresh
      std::vector<int> ranked;
      std::shared_ptr<const KnowledgeEntry> entry;
      RequestTrace t = serve_request(user, hit->second, now, repo, policy, trie,
                                     catalog, config, &ranked, &entry);
      result.used_entries.push_back(entry);
      result.used_histories.push_back(hit->second);
      result.ranked.push_back(ranked);
      latencies.push_back(t.latency_ms);
      if (!t.cold_start) staleness.push_back(t.staleness_ms);
      result.traces.push_back(std::move(t));
      if (!ranked.empty() && click(rng)) {
        auto& h = hit->second;
        h.push_back(ranked.front());
        if (h.size() > max_history) h.erase(h.begin());
      }
    } else if (ev.kind == SimClock::Kind::kRefresh) {
      ++passes;
      auto users = snapshot(known);
      for (std::size_t b = 0; b < users.size(); b += config.refresh_batch) {
        std::vector<std::pair<std::string, std::vector<int>>> part(
            users.begin() + b,
            users.begin() + std::min(users.size(), b + config.refresh_batch));
        Batch batch;
        batch.start = now;
        batch.work = plan_refresh(part, built_from, policy, &failures);
        double duration = 0.0;
        for (const auto& w : batch.work) {
          duration += w.recompute ? config.refresh_cost_ms : config.check_cost_ms;
        }
        result.max_batch_duration_ms =
            std::max(result.max_batch_duration_ms, duration);
        batches.push_back(std::move(batch));
        clock.schedule(now + duration, SimClock::Kind::kPublish,
                       batches.size() - 1);
      }
      if (now + config.refresh_period_ms <= horizon) {
        clock.schedule(now + config.refresh_period_ms, SimClock::Kind::kRefresh);
      }
    } else {
      Batch& batch = batches[ev.payload];
      for (auto& w : batch.work) {
        if (w.recompute) ++recomputed;
        else ++confirmed;
      }
      apply_refresh(batch.work, batch.start, now, repo, built_from);
      batch.work.clear();
    }
  }

  std::uint64_t h = 14695981039346656037ULL;
  std::size_t cold = 0;
  double llm = 0, lookups = 0, fusions = 0;
  for (const RequestTrace& t : result.traces) {
    const std::string line = t.to_json().dump();
    h = fnv1a_bytes(line.data(), line.size(), h);
    cold += t.cold_start ? 1 : 0;
    llm += static_cast<double>(t.llm_forward_count);
    lookups += static_cast<double>(t.lookup_count);
    fusions += static_cast<double>(t.fusion_count);
  }
  result.trace_checksum = h;
  const double n = static_cast<double>(std::max<std::size_t>(1, result.traces.size()));
  auto& s = result.summary;
  s["requests"] = static_cast<double>(result.traces.size());
  s["cold_start_rate"] = static_cast<double>(cold) / n;
  s["latency_p50_ms"] = percentile(latencies, 0.5);
  s["latency_p99_ms"] = percentile(latencies, 0.99);
  s["lookup_ms"] = config.lookup_ms;
  s["encode_ms"] = config.encode_ms;
  s["fusion_ms"] = config.fusion_ms;
  s["decode_ms"] = config.decode_step_ms *
                   static_cast<double>(policy.gr().config().levels());
  s["staleness_p50_ms"] = percentile(staleness, 0.5);
  s["staleness_max_ms"] = staleness.empty()
                              ? 0.0
                              : *std::max_element(staleness.begin(), staleness.end());
  s["refresh_period_ms"] = config.refresh_period_ms;
  s["max_batch_duration_ms"] = result.max_batch_duration_ms;
  s["refresh_passes"] = static_cast<double>(passes);
  s["recomputed_entries"] = static_cast<double>(recomputed);
  s["confirmed_entries"] = static_cast<double>(confirmed);
  s["refresh_failures"] = static_cast<double>(failures);
  s["llm_forward_total"] = llm;
  s["lookup_total"] = lookups;
  s["fusion_total"] = fusions;
  return result;
}

void write_traces(const std::string& path, const std::vector<RequestTrace>& t) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write traces " + path);
  for (const RequestTrace& r : t) out << r.to_json().dump() << '\n';
}

void write_summary(const std::string& path,
                   const std::map<std::string, double>& summary) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write summary " + path);
  out.precision(17);
  out << "statistic,value\n";
  for (const auto& [k, v] : summary) out << k << ',' << v << '\n';
}

}  // namespace kgr
