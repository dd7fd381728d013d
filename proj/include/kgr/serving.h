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

// Discrete-event simulation of nearline knowledge precomputation plus online
// serving. Nearline workers recompute per-user knowledge matrices into a
// versioned repository; an online request performs one repository lookup,
// one fusion and the constrained beam search, and never runs the knowledge
// model.

#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <queue>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgr/datagen.h"
#include "kgr/item_tokenizer.h"
#include "kgr/knowledge_source.h"
#include "kgr/policy.h"

namespace kgr {

struct KnowledgeEntry {
  KnowledgeMatrix knowledge;
  std::uint64_t version = 0;
  double refreshed_at = 0.0;  // logical ms
  std::uint64_t fingerprint = 0;  // of the context the matrix was built from
  std::uint64_t value_checksum = 0;  // of knowledge.h, for torn-read checks
};

// Per-user entries behind shared_ptr snapshots: a reader either sees the old
// entry or the new one, never a mixture.
class KnowledgeRepository {
 public:
  explicit KnowledgeRepository(KnowledgeMatrix default_knowledge);

  // One lookup. nullptr when the user has no entry.
  std::shared_ptr<const KnowledgeEntry> lookup(const std::string& user) const;
  // Nearline bookkeeping read; not counted as an online lookup.
  std::shared_ptr<const KnowledgeEntry> peek(const std::string& user) const;
  std::shared_ptr<const KnowledgeEntry> default_entry() const { return default_; }
  // Installs a new matrix with version = previous + 1. ContractError when
  // |refreshed_at| is later than |now| or earlier than the current entry.
  std::uint64_t publish(const std::string& user, KnowledgeMatrix knowledge,
                        std::uint64_t fingerprint, double refreshed_at,
                        double now);
  // Re-stamps an unchanged entry as verified at |refreshed_at|; the version
  // is kept because the matrix is unchanged.
  void confirm(const std::string& user, double refreshed_at, double now);

  std::size_t size() const;
  std::uint64_t lookup_count() const { return lookups_.load(); }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<const KnowledgeEntry>> entries_;
  std::shared_ptr<const KnowledgeEntry> default_;
  mutable std::atomic<std::uint64_t> lookups_{0};
};

// Logical clock with an event queue ordered by (time, insertion sequence).
class SimClock {
 public:
  enum class Kind { kRequest, kRefresh, kPublish };
  struct Event {
    double time = 0.0;
    std::uint64_t seq = 0;
    Kind kind = Kind::kRequest;
    std::size_t payload = 0;
  };

  double now() const { return now_; }
  // ContractError when |time| is in the past.
  void schedule(double time, Kind kind, std::size_t payload = 0);
  bool empty() const { return queue_.empty(); }
  // Removes the earliest event and advances the clock to it.
  Event pop();

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
};

struct ServingConfig {
  double refresh_period_ms = 1000.0;  // <= 0 disables periodic refresh
  std::size_t refresh_batch = 256;    // users per nearline worker batch
  double refresh_cost_ms = 2.0;       // modelled recompute cost per user
  double check_cost_ms = 0.01;        // modelled fingerprint check per user
  double lookup_ms = 0.2;
  double encode_ms = 1.0;
  double fusion_ms = 0.3;
  double decode_step_ms = 0.5;  // per SID level of beam search
  std::size_t k = 10;
  std::size_t beam = 20;
  bool cold_start_bypass = false;  // bypass fusion instead of default entry
  // Workload generation.
  std::size_t requests = 10000;
  double mean_interarrival_ms = 5.0;
  double click_prob = 0.5;          // chance the top item joins the history
  double new_user_fraction = 0.05;  // users absent from the initial refresh
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ServingConfig from_json(const nlohmann::json& j);
};

struct RequestTrace {
  std::string user_id;
  double arrival_ms = 0.0;
  std::uint64_t lookup_count = 0;
  std::uint64_t knowledge_version = 0;
  double staleness_ms = 0.0;
  std::uint64_t llm_forward_count = 0;
  std::uint64_t fusion_count = 0;
  double latency_ms = 0.0;
  bool cold_start = false;
  bool fresh = false;  // cached entry was built from the current context
  std::vector<std::string> top_k;

  nlohmann::json to_json() const;
};

// Fingerprint of a user context (the encoded history window).
std::uint64_t context_fingerprint(const std::vector<int>& history);

// Recomputes every listed user whose context changed since their entry was
// built and publishes with refreshed_at = |now|; unchanged users are only
// confirmed. Returns the number of recomputed users. Failures leave the
// prior entry and are counted in |failures|.
std::size_t nearline_refresh(
    const std::vector<std::pair<std::string, std::vector<int>>>& users,
    double now, KnowledgeRepository& repo, const PolicyModel& policy,
    std::size_t* failures = nullptr);

// Online path for one request.
RequestTrace serve_request(const std::string& user_id,
                           const std::vector<int>& history, double now,
                           const KnowledgeRepository& repo,
                           const PolicyModel& policy, const PrefixTrie& trie,
                           const std::vector<Item>& catalog,
                           const ServingConfig& config,
                           std::vector<int>* ranked = nullptr,
                           std::shared_ptr<const KnowledgeEntry>* used = nullptr);

struct WorkloadEntry {
  double time_ms = 0.0;
  std::string user_id;
};

std::vector<WorkloadEntry> make_workload(const SyntheticWorld& world,
                                         const ServingConfig& config);
void write_workload(const std::string& path, const std::vector<WorkloadEntry>& w);
std::vector<WorkloadEntry> read_workload(const std::string& path);

struct ScenarioResult {
  std::vector<RequestTrace> traces;
  std::map<std::string, double> summary;
  std::uint64_t trace_checksum = 0;
  // Every cached matrix used by a request, in trace order, for the offline
  // equivalence check.
  std::vector<std::shared_ptr<const KnowledgeEntry>> used_entries;
  std::vector<std::vector<int>> used_histories;
  std::vector<std::vector<int>> ranked;
  double max_batch_duration_ms = 0.0;
};

// Interleaves periodic nearline refreshes with the workload on a SimClock.
// Initial histories come from |histories| (keyed by user id); users listed
// in |initially_known| are refreshed at time 0 before serving opens.
ScenarioResult run_scenario(
    const std::vector<WorkloadEntry>& workload,
    std::map<std::string, std::vector<int>> histories,
    const std::vector<std::string>& initially_known, const PolicyModel& policy,
    const PrefixTrie& trie, const std::vector<Item>& catalog,
    std::size_t max_history, const ServingConfig& config);

// Convenience: histories and the initially known population for a world.
void serving_population(const SyntheticWorld& world, const Split& split,
                        const ServingConfig& config,
                        std::map<std::string, std::vector<int>>* histories,
                        std::vector<std::string>* initially_known);

void write_traces(const std::string& path, const std::vector<RequestTrace>& t);
void write_summary(const std::string& path,
                   const std::map<std::string, double>& summary);

}  // namespace kgr
