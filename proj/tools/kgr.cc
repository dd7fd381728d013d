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

// Command-line entry point. Every verb resolves the configuration, works in
// the run directory named by the config hash and seed, and reads the
// artifacts earlier verbs left there.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgr/checkpoint.h"
#include "kgr/config.h"
#include "kgr/errors.h"
#include "kgr/experiment.h"
#include "kgr/grad_check.h"
#include "kgr/serving.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kgr {
namespace {

struct Context {
  RunConfig cfg;
  json resolved;
  std::string hash;
  std::string dir;

  std::string path(const std::string& name) const { return dir + "/" + name; }
  std::string require(const std::string& name, const std::string& verb) const {
    const std::string p = path(name);
    if (!fs::exists(p)) {
      throw DependencyError("missing artifact " + p + " (produced by '" + verb +
                            "')");
    }
    return p;
  }
};

Context prepare(const std::string& config_path,
                const std::vector<std::string>& overrides) {
  Context c;
  c.cfg = load_run_config(config_path, overrides, &c.resolved);
  c.hash = config_hash(c.resolved);
  c.dir = run_directory(base_output_dir(), c.hash, c.cfg.experiment.seed);
  fs::create_directories(c.dir);
  std::ofstream(c.path("config.json")) << c.resolved.dump(2) << '\n';
  return c;
}

// Rebuilds the shared artifacts from files in the run directory.
Workbench load_bench(const Context& c, bool lm, bool reference) {
  Workbench b;
  b.config = c.cfg.experiment;
  b.world = read_world(c.require("world.jsonl", "gen-data"));
  b.split = leave_one_out_split(b.world, b.config.max_history);
  b.codebooks = read_codebooks(c.require("codebooks.json", "fit-sids"));
  b.sids = encode_catalog(content_matrix(b.world.catalog()), b.codebooks);
  b.trie = std::make_unique<PrefixTrie>(b.sids);
  if (lm) {
    const std::string p = c.require("lm.ckpt.json", "pretrain-lm");
    b.make_lm(false);
    ParameterStore* stores[] = {&b.lm->params()};
    load_checkpoint(p, stores);
    b.lm->freeze();
    b.lm->set_catalog(b.world.catalog());
  }
  if (reference) {
    const std::string p = c.require("reference.ckpt.json", "pretrain-reference");
    b.make_reference(false);
    ParameterStore* stores[] = {&b.reference->params()};
    load_checkpoint(p, stores);
  }
  return b;
}

std::unique_ptr<PolicyModel> load_policy(const Context& c, Workbench& b) {
  const std::string p = c.require("policy.ckpt.json", "train");
  const json header = read_checkpoint_header(p);
  const Variant v = parse_variant(header.at("variant").get<std::string>());
  if (header.at("strategy") == "lora") {
    b.lm->attach_lora(c.cfg.experiment.train.lora, 0);
  }
  auto policy = b.make_policy(v);
  std::vector<ParameterStore*> stores = policy->stores();
  load_checkpoint(p, stores);
  return policy;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write " + path);
  out << j.dump(2) << '\n';
}

int gen_data(const Context& c) {
  const ExperimentConfig& e = c.cfg.experiment;
  SyntheticWorld w = generate_world(e.world, e.world_seed);
  write_world(c.path("world.jsonl"), w);
  Split s = leave_one_out_split(w, e.max_history);
  write_json(c.path("data_summary.json"),
             {{"users", w.users.size()},
              {"items", w.items.size()},
              {"train_examples", s.train.size()},
              {"validation_examples", s.validation.size()},
              {"test_examples", s.test.size()},
              {"excluded_users", s.excluded_users},
              {"world_checksum", w.checksum()},
              {"text_topic_mi", text_topic_mutual_information(w)}});
  return 0;
}

int fit_sids(const Context& c) {
  Workbench b;
  b.config = c.cfg.experiment;
  b.world = read_world(c.require("world.jsonl", "gen-data"));
  b.make_sids();
  write_codebooks(c.path("codebooks.json"), b.codebooks);
  write_sid_csv(c.path("sids.csv"), b.world.catalog(), b.sids);
  return 0;
}

int pretrain_lm(const Context& c) {
  Workbench b;
  b.config = c.cfg.experiment;
  b.world = read_world(c.require("world.jsonl", "gen-data"));
  b.split = leave_one_out_split(b.world, b.config.max_history);
  b.make_lm(true);
  const ParameterStore* stores[] = {&b.lm->params()};
  save_checkpoint(c.path("lm.ckpt.json"),
                  {{"kind", "knowledge_model"}, {"config", c.resolved["knowledge_model"]}},
                  stores);
  std::ofstream out(c.path("lm_pretrain.csv"));
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < b.lm_report.losses.size(); ++i) {
    out << i << ',' << b.lm_report.losses[i] << '\n';
  }
  write_json(c.path("lm_summary.json"),
             {{"final_loss", b.lm_report.final_loss},
              {"unigram_entropy", b.lm_report.unigram_entropy},
              {"base_checksum", b.lm->base_checksum()}});
  return 0;
}

int pretrain_reference(const Context& c) {
  Workbench b = load_bench(c, false, false);
  b.make_reference(true);
  const ParameterStore* stores[] = {&b.reference->params()};
  save_checkpoint(c.path("reference.ckpt.json"),
                  {{"kind", "reference"}, {"backbone", b.backbone_config().to_json()}},
                  stores);
  std::ofstream out(c.path("reference_train.csv"));
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < b.reference_losses.size(); ++i) {
    out << i << ',' << b.reference_losses[i] << '\n';
  }
  return 0;
}

int train_verb(const Context& c) {
  Workbench b = load_bench(c, true, true);
  const TrainConfig& tc0 = c.cfg.experiment.train;
  auto policy = b.make_policy(tc0.variant);
  TrainConfig tc = tc0;
  tc.seed = c.cfg.experiment.seed + 401;
  TrainResult r = train(*policy, *b.reference, b.split.train, tc,
                        c.path("train_log.csv"));
  std::vector<const ParameterStore*> stores =
      std::as_const(*policy).stores();
  save_checkpoint(c.path("policy.ckpt.json"),
                  {{"kind", "policy"},
                   {"variant", variant_name(tc.variant)},
                   {"strategy", strategy_name(tc.strategy)},
                   {"final_lambda", r.dual.lambda},
                   {"reference_checksum", r.reference_checksum_after}},
                  stores);
  return 0;
}

int eval_verb(const Context& c) {
  Workbench b = load_bench(c, true, true);
  auto policy = load_policy(c, b);
  EvalReport report;
  report.seed = c.cfg.experiment.seed;
  report.config_hash = c.hash;
  const auto examples = b.eval_examples();
  add_metrics(report, "reference",
              rank_reference(*b.reference, b.sids, *b.trie, examples, 10, b.config.beam),
              b.world, report.seed);
  add_metrics(report, variant_name(policy->config().variant),
              rank_policy(*policy, *b.trie, examples, 10, b.config.beam), b.world,
              report.seed);
  write_report_csv(c.path("metrics.csv"), report);
  return 0;
}

void write_runs(const Context& c, const EvalReport& report, const std::string& sub) {
  fs::create_directories(c.path(sub));
  json failures = json::array();
  for (const VariantRun& run : report.runs) {
    if (!run.error.empty()) failures.push_back({{"variant", run.label}, {"error", run.error}});
    write_train_log(c.path(sub + "/" + run.label + ".csv"), run.log);
  }
  write_json(c.path(sub + "/failures.json"), failures);
}

int ablate(const Context& c) {
  Workbench b = load_bench(c, true, true);
  EvalReport report = run_ablation(b);
  write_report_csv(c.path("ablation.csv"), report);
  write_runs(c, report, "ablation_logs");
  return 0;
}

int sweep(const Context& c) {
  Workbench b = load_bench(c, true, true);
  EvalReport report = sweep_k(b, c.cfg.experiment.k_values);
  write_report_csv(c.path("sweep_k.csv"), report);
  write_runs(c, report, "sweep_logs");
  return 0;
}

int serve_sim(const Context& c) {
  Workbench b = load_bench(c, true, true);
  auto policy = load_policy(c, b);
  ServingConfig sc = c.cfg.serving;
  std::vector<WorkloadEntry> workload;
  if (fs::exists(c.path("workload.csv"))) {
    workload = read_workload(c.path("workload.csv"));
  } else {
    workload = make_workload(b.world, sc);
    write_workload(c.path("workload.csv"), workload);
  }
  std::map<std::string, std::vector<int>> histories;
  std::vector<std::string> known;
  serving_population(b.world, b.split, sc, &histories, &known);
  ScenarioResult r = run_scenario(workload, histories, known, *policy, *b.trie,
                                  b.world.catalog(), b.config.max_history, sc);
  write_traces(c.path("traces.jsonl"), r.traces);
  write_summary(c.path("serving_summary.csv"), r.summary);
  return 0;
}

int grad_check_verb(const Context& c, int seeds) {
  Workbench b = load_bench(c, true, false);
  b.make_reference(false);
  std::ofstream out(c.path("grad_check.csv"));
  out.precision(17);
  out << "seed,max_rel_error,worst_param,coords\n";
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    auto policy = b.make_policy(c.cfg.experiment.train.variant);
    std::mt19937_64 rng(static_cast<std::uint64_t>(s));
    Parameter* o = policy->fusion().params().find("fusion.attn.o.w");
    o->value = Tensor::normal(o->value.shape(), 0.3, rng);
    std::uniform_int_distribution<std::size_t> pick(0, b.split.train.size() - 1);
    std::vector<const Example*> batch{&b.split.train[pick(rng)], &b.split.train[pick(rng)]};
    std::vector<double> refs{policy_score(*policy, *batch[0]) + 0.3,
                             policy_score(*policy, *batch[1]) - 0.3};
    DualState d = c.cfg.experiment.train.dual;
    d.lambda = 0.7;
    auto f = [&](Graph& g) {
      return build_objective(g, *policy, batch, refs, d,
                             c.cfg.experiment.train.variant, 0.0)
          .total;
    };
    GradCheckOptions opt;
    opt.max_coords_per_param = 4;
    opt.seed = static_cast<std::uint64_t>(s);
    auto params = policy->trainable();
    GradCheckResult r = grad_check(f, params, opt);
    worst = std::max(worst, r.max_rel_error);
    out << s << ',' << r.max_rel_error << ',' << r.worst_param << ','
        << r.coords_checked << '\n';
  }
  std::cout << "max relative error " << worst << '\n';
  return worst < 1e-4 ? 0 : 1;
}

int report_error(const std::string& kind, const std::string& message, int code,
                 const std::string& dir) {
  json e{{"status", "error"}, {"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << e.dump() << '\n';
  if (!dir.empty() && fs::exists(dir)) std::ofstream(dir + "/error.json") << e.dump(2) << '\n';
  return code;
}

}  // namespace
}  // namespace kgr

int main(int argc, char** argv) {
  using namespace kgr;
  CLI::App app{"Knowledge-fused generative retrieval toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  int seeds = 20;
  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"gen-data", "Generate the synthetic world"},
      {"fit-sids", "Fit semantic-ID codebooks"},
      {"pretrain-lm", "Pretrain the knowledge model"},
      {"pretrain-reference", "Train the knowledge-free reference backbone"},
      {"train", "Train the policy under the configured variant"},
      {"eval", "Evaluate reference and policy on the test split"},
      {"ablate", "Train and evaluate every ablation variant"},
      {"sweep-k", "Train and evaluate one model per codebook count"},
      {"serve-sim", "Run the nearline/online serving simulation"},
      {"grad-check", "Finite-difference check of the training objective"}};
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "Dotted override, e.g. train.steps=50");
    if (name == "grad-check") sub->add_option("--seeds", seeds, "Number of seeds");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();
  std::string dir;
  try {
    Context c = prepare(config_path, overrides);
    dir = c.dir;
    int rc = 0;
    if (verb == "gen-data") rc = gen_data(c);
    else if (verb == "fit-sids") rc = fit_sids(c);
    else if (verb == "pretrain-lm") rc = pretrain_lm(c);
    else if (verb == "pretrain-reference") rc = pretrain_reference(c);
    else if (verb == "train") rc = train_verb(c);
    else if (verb == "eval") rc = eval_verb(c);
    else if (verb == "ablate") rc = ablate(c);
    else if (verb == "sweep-k") rc = sweep(c);
    else if (verb == "serve-sim") rc = serve_sim(c);
    else if (verb == "grad-check") rc = grad_check_verb(c, seeds);
    std::cout << json{{"status", rc == 0 ? "ok" : "failed"}, {"verb", verb}, {"run_dir", c.dir}}.dump()
              << '\n';
    return rc;
  } catch (const ConfigError& e) {
    return report_error("config", e.what(), 2, dir);
  } catch (const DependencyError& e) {
    return report_error("dependency", e.what(), 3, dir);
  } catch (const NumericError& e) {
    return report_error("numeric", e.what(), 4, dir);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1, dir);
  }
}
