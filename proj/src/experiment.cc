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

#include "kgr/experiment.h"

#include <fstream>
#include <map>
#include <sstream>

#include "kgr/errors.h"
#include "kgr/metrics.h"

namespace kgr {

namespace {

using nlohmann::json;

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adamw";
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", optimizer_name(o.kind)}, {"lr", o.lr},
          {"beta1", o.beta1},               {"beta2", o.beta2},
          {"eps", o.eps},                   {"weight_decay", o.weight_decay},
          {"clip_norm", o.clip_norm}};
}

OptimizerConfig optimizer_from(const json& j) {
  OptimizerConfig o;
  o.kind = parse_optimizer(j.at("kind").get<std::string>());
  o.lr = j.at("lr");
  o.beta1 = j.at("beta1");
  o.beta2 = j.at("beta2");
  o.eps = j.at("eps");
  o.weight_decay = j.at("weight_decay");
  o.clip_norm = j.at("clip_norm");
  return o;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  train.optimizer = {OptimizerKind::kSgd, 1e-4};
  train.batch = 32;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["world_seed"] = world_seed;
  j["world"] = world.to_json();
  j["max_history"] = max_history;
  j["sids"] = {{"levels", sid_levels}, {"codewords", sid_codewords}};
  j["backbone"] = {{"d", backbone.d},
                   {"encoder_layers", backbone.encoder_layers},
                   {"decoder_layers", backbone.decoder_layers},
                   {"heads", backbone.heads},
                   {"ff_hidden", backbone.ff_hidden},
                   {"max_items", backbone.max_items}};
  j["knowledge_model"] = {{"d", lm.d},
                          {"layers", lm.layers},
                          {"heads", lm.heads},
                          {"ff_hidden", lm.ff_hidden},
                          {"max_len", lm.max_len}};
  j["lm_pretrain"] = {{"steps", lm_pretrain.steps},
                      {"batch", lm_pretrain.batch},
                      {"window", lm_pretrain.window},
                      {"lr", lm_pretrain.lr},
                      {"eval_windows", lm_pretrain.eval_windows}};
  j["reference"] = {{"optimizer", optimizer_json(reference.optimizer)},
                    {"steps", reference.steps},
                    {"batch", reference.batch}};
  j["instruction"] = {{"K", instruction.K},
                      {"codewords", instruction.codewords},
                      {"tau", instruction.tau}};
  j["fusion"] = {{"heads", fusion_heads}, {"mode", fusion_mode_name(fusion_mode)}};
  j["train"] = {{"variant", variant_name(train.variant)},
                {"strategy", strategy_name(train.strategy)},
                {"optimizer", optimizer_json(train.optimizer)},
                {"schedule", lr_schedule_name(train.schedule)},
                {"steps", train.steps},
                {"batch", train.batch},
                {"lambda0", train.dual.lambda},
                {"eta_lambda", train.dual.eta_lambda},
                {"epsilon", train.dual.epsilon},
                {"delta", train.dual.delta},
                {"beta", train.dual.beta},
                {"entropy_weight", train.entropy_weight},
                {"divergence_factor", train.divergence_factor},
                {"lora",
                 {{"rank", train.lora.rank},
                  {"scale", train.lora.scale},
                  {"dropout", train.lora.dropout}}}};
  j["ablation"] = {{"beta_grid", beta_grid}};
  j["sweep"] = {{"k_values", k_values}};
  j["eval"] = {{"beam", beam}, {"users", eval_users}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed");
  c.world_seed = j.at("world_seed");
  c.world = WorldSpec::from_json(j.at("world"));
  c.max_history = j.at("max_history");
  c.sid_levels = j.at("sids").at("levels");
  c.sid_codewords = j.at("sids").at("codewords");
  const json& b = j.at("backbone");
  c.backbone.d = b.at("d");
  c.backbone.encoder_layers = b.at("encoder_layers");
  c.backbone.decoder_layers = b.at("decoder_layers");
  c.backbone.heads = b.at("heads");
  c.backbone.ff_hidden = b.at("ff_hidden");
  c.backbone.max_items = b.at("max_items");
  const json& k = j.at("knowledge_model");
  c.lm.d = k.at("d");
  c.lm.layers = k.at("layers");
  c.lm.heads = k.at("heads");
  c.lm.ff_hidden = k.at("ff_hidden");
  c.lm.max_len = k.at("max_len");
  const json& p = j.at("lm_pretrain");
  c.lm_pretrain.steps = p.at("steps");
  c.lm_pretrain.batch = p.at("batch");
  c.lm_pretrain.window = p.at("window");
  c.lm_pretrain.lr = p.at("lr");
  c.lm_pretrain.eval_windows = p.at("eval_windows");
  const json& r = j.at("reference");
  c.reference.optimizer = optimizer_from(r.at("optimizer"));
  c.reference.steps = r.at("steps");
  c.reference.batch = r.at("batch");
  const json& in = j.at("instruction");
  c.instruction.K = in.at("K");
  c.instruction.codewords = in.at("codewords");
  c.instruction.tau = in.at("tau");
  c.fusion_heads = j.at("fusion").at("heads");
  c.fusion_mode = parse_fusion_mode(j.at("fusion").at("mode").get<std::string>());
  const json& t = j.at("train");
  c.train.variant = parse_variant(t.at("variant").get<std::string>());
  c.train.strategy = parse_strategy(t.at("strategy").get<std::string>());
  c.train.optimizer = optimizer_from(t.at("optimizer"));
  c.train.schedule = parse_lr_schedule(t.at("schedule").get<std::string>());
  c.train.steps = t.at("steps");
  c.train.batch = t.at("batch");
  c.train.dual.lambda = t.at("lambda0");
  c.train.dual.eta_lambda = t.at("eta_lambda");
  c.train.dual.epsilon = t.at("epsilon");
  c.train.dual.delta = t.at("delta");
  c.train.dual.beta = t.at("beta");
  c.train.entropy_weight = t.at("entropy_weight");
  c.train.divergence_factor = t.at("divergence_factor");
  c.train.lora.rank = t.at("lora").at("rank");
  c.train.lora.scale = t.at("lora").at("scale");
  c.train.lora.dropout = t.at("lora").at("dropout");
  c.beta_grid = j.at("ablation").at("beta_grid").get<std::vector<double>>();
  c.k_values = j.at("sweep").at("k_values").get<std::vector<std::size_t>>();
  c.beam = j.at("eval").at("beam");
  c.eval_users = j.at("eval").at("users");
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (instruction.K == 0 || instruction.K > backbone.d) {
    throw ConfigError("instruction.K must be in [1, backbone.d]");
  }
  if (beam < 10) throw ConfigError("eval.beam must be >= 10 (metrics use top-10)");
  if (max_history > backbone.max_items) {
    throw ConfigError("max_history exceeds backbone.max_items");
  }
  if (instruction.K + max_history > lm.max_len) {
    throw ConfigError("instruction.K + max_history exceeds knowledge_model.max_len");
  }
  for (double b : beta_grid) {
    if (b < 0.0) throw ConfigError("ablation.beta_grid entries must be >= 0");
  }
  for (std::size_t k : k_values) {
    if (k == 0 || k > backbone.d) throw ConfigError("sweep.k_values must be in [1, d]");
  }
}

// ---------------------------------------------------------------- workbench

Workbench Workbench::build(const ExperimentConfig& config) {
  config.validate();
  Workbench b;
  b.config = config;
  b.make_world();
  b.make_sids();
  b.make_lm(true);
  b.make_reference(true);
  return b;
}

void Workbench::make_world() {
  world = generate_world(config.world, config.world_seed);
  split = leave_one_out_split(world, config.max_history);
}

void Workbench::make_sids() {
  const Tensor x = content_matrix(world.catalog());
  codebooks = fit_codebooks(x, config.sid_levels, config.sid_codewords,
                            config.world_seed);
  sids = encode_catalog(x, codebooks);
  trie = std::make_unique<PrefixTrie>(sids);
}

void Workbench::make_lm(bool pretrain) {
  KnowledgeModelConfig lc = config.lm;
  lc.vocab = config.world.text_vocab;
  lm = std::make_unique<KnowledgeModel>(lc, config.seed + 101);
  if (pretrain) {
    PretrainConfig pc = config.lm_pretrain;
    pc.seed = config.seed + 102;
    lm_report = pretrain_toy_lm(*lm, knowledge_corpus(world, split), pc);
  }
  lm->freeze();
  lm->set_catalog(world.catalog());
}

void Workbench::make_reference(bool pretrain) {
  reference = std::make_unique<GrModel>(backbone_config(), config.seed + 201);
  if (pretrain) {
    ReferenceTrainConfig rc = config.reference;
    rc.seed = config.seed + 202;
    reference_losses = train_reference(*reference, sids, split.train, rc);
  }
  for (Parameter* p : reference->params().all()) p->trainable = false;
}

GrConfig Workbench::backbone_config() const {
  GrConfig g = config.backbone;
  g.level_sizes = sids.level_sizes;
  return g;
}

PolicyConfig Workbench::policy_config(Variant variant) const {
  PolicyConfig p;
  p.gr = backbone_config();
  p.instruction = config.instruction;
  p.fusion_heads = config.fusion_heads;
  p.fusion_mode = config.fusion_mode;
  p.variant = variant;
  return p;
}

std::unique_ptr<PolicyModel> Workbench::make_policy(Variant variant) const {
  if (!lm || !reference) throw ContractError("make_policy: workbench incomplete");
  auto p = std::make_unique<PolicyModel>(policy_config(variant), *lm, sids,
                                         config.seed + 301);
  p->warm_start(*reference);
  return p;
}

std::vector<Example> Workbench::eval_examples() const {
  const std::size_t n = split.test.size();
  if (config.eval_users == 0 || config.eval_users >= n) return split.test;
  std::vector<Example> out;
  for (std::size_t i = 0; i < config.eval_users; ++i) {
    out.push_back(split.test[i * n / config.eval_users]);
  }
  return out;
}

std::vector<std::vector<int>> knowledge_corpus(const SyntheticWorld& world,
                                               const Split& split) {
  std::vector<std::vector<int>> corpus;
  for (const auto& seq : split.train_sequences) {
    std::vector<int> doc;
    for (int item : seq) {
      const auto& t = world.items[item].item.text_tokens;
      doc.insert(doc.end(), t.begin(), t.end());
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

// ---------------------------------------------------------------- ranking

namespace {

std::vector<int> top_items(const std::vector<RankedItem>& r) {
  std::vector<int> out;
  out.reserve(r.size());
  for (const auto& x : r) out.push_back(x.item);
  return out;
}

}  // namespace

std::vector<RankedList> rank_reference(const GrModel& reference,
                                       const SidTable& sids,
                                       const PrefixTrie& trie,
                                       std::span<const Example> examples,
                                       std::size_t k, std::size_t beam) {
  std::vector<RankedList> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    Graph g;
    g.set_grad_enabled(false);
    EncoderOutput enc = reference.encode(g, ex.history, sids);
    auto r = reference.generate_topk(reference.bos(g), reference.memory(enc), k,
                                     beam, trie);
    out.push_back({ex.user, ex.target, top_items(r)});
  }
  return out;
}

std::vector<RankedList> rank_policy(const PolicyModel& policy,
                                    const PrefixTrie& trie,
                                    std::span<const Example> examples,
                                    std::size_t k, std::size_t beam) {
  std::vector<RankedList> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    Graph g;
    g.set_grad_enabled(false);
    PolicyForward f = policy.forward(g, ex.history);
    auto r = policy.gr().generate_topk(f.start, f.memory, k, beam, trie);
    out.push_back({ex.user, ex.target, top_items(r)});
  }
  return out;
}

// ---------------------------------------------------------------- reports

double EvalReport::value(const std::string& variant, const std::string& metric,
                         const std::string& cohort) const {
  for (const MetricRow& r : rows) {
    if (r.variant == variant && r.metric == metric && r.cohort == cohort) {
      return r.value;
    }
  }
  throw LookupError("report has no " + metric + " for " + variant + "/" + cohort);
}

bool EvalReport::has_variant(const std::string& variant) const {
  for (const MetricRow& r : rows) {
    if (r.variant == variant) return true;
  }
  return false;
}

void add_metrics(EvalReport& report, const std::string& variant,
                 std::span<const RankedList> lists, const SyntheticWorld& world,
                 std::uint64_t seed) {
  if (lists.empty()) throw ContractError("add_metrics: no ranked lists");
  struct Sums {
    double r5 = 0, r10 = 0, n5 = 0, n10 = 0;
    std::size_t n = 0;
  };
  std::map<std::string, Sums> by;
  std::vector<std::string> order{"all"};
  for (const auto& c : world.spec.cohorts) order.push_back(c.name);
  for (const RankedList& l : lists) {
    const std::string& cohort =
        world.spec.cohorts[world.users.at(l.user).cohort].name;
    for (const std::string& key : {std::string("all"), cohort}) {
      Sums& s = by[key];
      s.r5 += recall_at_k(l.items, l.target, 5);
      s.r10 += recall_at_k(l.items, l.target, 10);
      s.n5 += ndcg_at_k(l.items, l.target, 5);
      s.n10 += ndcg_at_k(l.items, l.target, 10);
      ++s.n;
    }
  }
  for (const std::string& key : order) {
    auto it = by.find(key);
    if (it == by.end()) continue;
    const double n = static_cast<double>(it->second.n);
    report.rows.push_back({variant, "recall@5", it->second.r5 / n, key, seed});
    report.rows.push_back({variant, "recall@10", it->second.r10 / n, key, seed});
    report.rows.push_back({variant, "ndcg@5", it->second.n5 / n, key, seed});
    report.rows.push_back({variant, "ndcg@10", it->second.n10 / n, key, seed});
  }
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write report " + path);
  out.precision(17);
  out << "variant,metric,value,cohort,seed\n";
  for (const MetricRow& r : report.rows) {
    out << r.variant << ',' << r.metric << ',' << r.value << ',' << r.cohort
        << ',' << r.seed << '\n';
  }
}

std::vector<MetricRow> read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing report " + path);
  std::string line;
  std::getline(in, line);
  if (line != "variant,metric,value,cohort,seed") {
    throw ContractError("report " + path + " has an unexpected header");
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string value, seed;
    std::getline(ss, r.variant, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, value, ',');
    std::getline(ss, r.cohort, ',');
    std::getline(ss, seed, ',');
    r.value = std::stod(value);
    r.seed = std::stoull(seed);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------- harnesses

VariantRun run_variant(const Workbench& bench, Variant variant,
                       const std::string& label, TrainConfig train_config,
                       std::unique_ptr<PolicyModel>* keep) {
  VariantRun run;
  run.label = label;
  run.variant = variant;
  train_config.variant = variant;
  train_config.seed = bench.config.seed + 401;
  auto policy = bench.make_policy(variant);
  TrainResult r = train(*policy, *bench.reference, bench.split.train, train_config);
  run.log = std::move(r.log);
  const auto examples = bench.eval_examples();
  run.ranked = rank_policy(*policy, *bench.trie, examples, 10, bench.config.beam);
  if (keep != nullptr) *keep = std::move(policy);
  return run;
}

namespace {

std::string beta_label(double beta) {
  std::ostringstream s;
  s << "fixed_beta_" << beta;
  return s.str();
}

void record(EvalReport& report, const Workbench& bench, VariantRun run) {
  if (run.error.empty()) {
    add_metrics(report, run.label, run.ranked, bench.world, bench.config.seed);
  }
  report.runs.push_back(std::move(run));
}

VariantRun guarded(const Workbench& bench, Variant v, const std::string& label,
                   const TrainConfig& tc) {
  try {
    return run_variant(bench, v, label, tc);
  } catch (const std::exception& e) {
    VariantRun failed;
    failed.label = label;
    failed.variant = v;
    failed.error = e.what();
    return failed;
  }
}

}  // namespace

EvalReport run_ablation(const Workbench& bench,
                        const std::vector<Variant>& variants) {
  if (!bench.reference) throw ContractError("run_ablation: reference not trained");
  EvalReport report;
  report.seed = bench.config.seed;
  const auto examples = bench.eval_examples();
  add_metrics(report, "reference",
              rank_reference(*bench.reference, bench.sids, *bench.trie, examples,
                             10, bench.config.beam),
              bench.world, bench.config.seed);
  for (Variant v : variants) {
    if (v == Variant::kFixedBeta) {
      for (double beta : bench.config.beta_grid) {
        TrainConfig tc = bench.config.train;
        tc.dual.beta = beta;
        record(report, bench, guarded(bench, v, beta_label(beta), tc));
      }
    } else {
      record(report, bench, guarded(bench, v, variant_name(v), bench.config.train));
    }
  }
  return report;
}

EvalReport sweep_k(const Workbench& bench, const std::vector<std::size_t>& ks) {
  EvalReport report;
  report.seed = bench.config.seed;
  for (std::size_t k : ks) {
    if (k == 0) throw ConfigError("sweep_k: K must be >= 1");
    ExperimentConfig c = bench.config;
    c.instruction.K = k;
    c.validate();
    const std::string label = "K=" + std::to_string(k);
    VariantRun run;
    try {
      auto policy = std::make_unique<PolicyModel>(
          [&] {
            PolicyConfig p = bench.policy_config(Variant::kFull);
            p.instruction.K = k;
            return p;
          }(),
          *bench.lm, bench.sids, c.seed + 301);
      policy->warm_start(*bench.reference);
      TrainConfig tc = c.train;
      tc.variant = Variant::kFull;
      tc.seed = c.seed + 401;
      run.log = train(*policy, *bench.reference, bench.split.train, tc).log;
      run.ranked = rank_policy(*policy, *bench.trie, bench.eval_examples(), 10,
                               c.beam);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    run.label = label;
    run.variant = Variant::kFull;
    record(report, bench, std::move(run));
  }
  return report;
}

}  // namespace kgr
