// Copyright 2026 The rtr Authors.
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

#include "rtr/pipeline.h"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "fmt/format.h"
#include "json.hpp"
#include "rtr/error.h"
#include "spdlog/spdlog.h"

namespace rtr {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string>& path_keys() {
  static const std::set<std::string> keys = {"data.train", "data.dev", "data.test",
                                             "data.sim",   "data.ood", "prompt",
                                             "ood_prompt"};
  return keys;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items, const char* key) {
  std::vector<double> out;
  for (const auto& item : items) {
    KeyValueConfig one;
    one.set(key, item);
    out.push_back(one.get_double(key, 0.0));
  }
  return out;
}

std::string number_label(double v) { return fmt::format("{:g}", v); }

}  // namespace

// Configuration ---------------------------------------------------------------

KeyValueConfig default_config() {
  return KeyValueConfig::parse(R"(
run_id = default
run_dir =
method =
data.train =
data.dev =
data.test =
data.sim =
data.ood =
data.source = synthetic
data.ood_source = synthetic-ood
dev_fraction = 0.1
dev_seed = 0
prompt =
ood_prompt =
backend = knowledge
backend_url =
backend_timeout = 60
knowledge.leak = deterministic
knowledge.vocab_size = 48
knowledge.noise_length = 3
generation.max_new_tokens = 64
generation.parallelism = 4
generation.max_attempts = 3
model.hidden = 16
model.max_len = 96
model.max_segment_position = 16
model.init_scale = 0.3
mode = counterfactual
epsilon = 0.1
replace_rate = 0.3
strategies = auto
dropout_context_rate = 0.5
optimizer = adam
learning_rate = 0.01
batch_size = 16
epochs = 10
seeds = 1,2,3,4
suite = accuracy,las
sweep.epsilons = 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0
low_resource.fractions = 0.2,0.4,0.6,0.8,1.0
simulator.epochs = 10
simulator.learning_rate = 0.01
simulator.batch_size = 16
synth.seed = 1
synth.n_train = 500
synth.n_test = 100
synth.n_sim = 200
synth.n_ood = 100
synth.choices = 4
synth.vocab_size = 48
synth.leak = deterministic
synth.cue_train = none
synth.cue_eval = auto
synth.ood_offset = 1000
)",
                               "<defaults>");
}

KeyValueConfig resolve_config(const std::optional<fs::path>& file,
                              const KeyValueConfig& overrides) {
  KeyValueConfig config = default_config();
  auto absolutize = [](KeyValueConfig& layer, const fs::path& base) {
    for (const auto& key : path_keys()) {
      const auto v = layer.get(key);
      if (v && !v->empty() && fs::path(*v).is_relative()) {
        layer.set(key, (base / *v).lexically_normal().string());
      }
    }
  };
  if (file) {
    KeyValueConfig layer = KeyValueConfig::load(*file);
    absolutize(layer, fs::absolute(*file).parent_path());
    config.merge(layer);
  }
  KeyValueConfig cli = overrides;
  absolutize(cli, fs::current_path());
  config.merge(cli);
  for (const auto& [key, value] : config.values()) {
    if (!default_config().contains(key)) spdlog::warn("unrecognised config key: {}", key);
  }
  return config;
}

std::vector<std::uint64_t> config_seeds(const KeyValueConfig& config) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : config.get_list("seeds", {"1"})) {
    KeyValueConfig one;
    one.set("seed", item);
    seeds.push_back(one.get_uint("seed", 0));
  }
  if (seeds.empty()) throw UsageError("no seeds configured");
  return seeds;
}

ToyReasonerConfig model_config(const KeyValueConfig& config, std::uint64_t seed) {
  ToyReasonerConfig m;
  m.hidden = config.get_uint("model.hidden", m.hidden);
  m.max_len = config.get_uint("model.max_len", m.max_len);
  m.max_segment_position = config.get_uint("model.max_segment_position", m.max_segment_position);
  m.init_scale = config.get_double("model.init_scale", m.init_scale);
  m.seed = seed;
  if (m.hidden == 0 || m.max_len == 0 || m.max_segment_position == 0) {
    throw UsageError("model sizes must be positive");
  }
  return m;
}

SimulatorConfig simulator_config(const KeyValueConfig& config) {
  SimulatorConfig s;
  s.model = model_config(config, 0);
  s.train.epochs = config.get_uint("simulator.epochs", s.train.epochs);
  s.train.learning_rate = config.get_double("simulator.learning_rate", s.train.learning_rate);
  s.train.batch_size = config.get_uint("simulator.batch_size", s.train.batch_size);
  return s;
}

GenerationOptions generation_options(const KeyValueConfig& config) {
  GenerationOptions g;
  g.params.max_new_tokens = config.get_uint("generation.max_new_tokens", g.params.max_new_tokens);
  g.parallelism = config.get_uint("generation.parallelism", g.parallelism);
  g.max_attempts = config.get_uint("generation.max_attempts", g.max_attempts);
  if (g.parallelism == 0 || g.max_attempts == 0) {
    throw UsageError("generation parallelism and attempts must be positive");
  }
  return g;
}

std::string config_fingerprint(const KeyValueConfig& config) {
  KeyValueConfig stable;
  for (const auto& [key, value] : config.values()) {
    if (key == "run_dir" || key == "run_id" || path_keys().count(key)) continue;
    stable.set(key, value);
  }
  return sha256_hex(stable.serialize()).substr(0, 16);
}

// Data ----------------------------------------------------------------------

std::vector<std::pair<std::string, const DatasetSplit*>> Datasets::rationale_roles() const {
  std::vector<std::pair<std::string, const DatasetSplit*>> roles;
  if (!train.empty()) roles.emplace_back("train", &train);
  if (!dev.empty()) roles.emplace_back("dev", &dev);
  if (!test.empty()) roles.emplace_back("test", &test);
  if (sim) roles.emplace_back("sim", &*sim);
  return roles;
}

Datasets load_datasets(const KeyValueConfig& config) {
  Datasets data;
  const std::string source = config.get_string("data.source", "synthetic");
  const std::string train_path = config.get_string("data.train", "");
  if (train_path.empty()) throw UsageError("data.train is not set");
  data.train = load_dataset(train_path, SplitName::kTrain, source);

  const std::string dev_path = config.get_string("data.dev", "");
  if (!dev_path.empty()) {
    data.dev = load_dataset(dev_path, SplitName::kDev, source);
  } else {
    auto [train, dev] = split_train_dev(data.train, config.get_double("dev_fraction", 0.1),
                                        config.get_uint("dev_seed", 0));
    data.train = std::move(train);
    data.dev = std::move(dev);
    data.dev_from_train = true;
  }
  if (const auto p = config.get_string("data.test", ""); !p.empty()) {
    data.test = load_dataset(p, SplitName::kTest, source);
  }
  if (const auto p = config.get_string("data.sim", ""); !p.empty()) {
    data.sim = load_dataset(p, SplitName::kTest, source);
  }
  if (const auto p = config.get_string("data.ood", ""); !p.empty()) {
    data.ood = load_dataset(p, SplitName::kTest,
                            config.get_string("data.ood_source", "ood"));
  }
  std::set<std::string> ids;
  auto check = [&ids](const DatasetSplit& split) {
    for (const auto& instance : split.instances) {
      if (!ids.insert(instance.id).second) throw DuplicateId(instance.id);
    }
  };
  for (const auto& [role, split] : data.rationale_roles()) check(*split);
  if (data.ood) check(*data.ood);
  return data;
}

PromptSpec synthetic_prompt_spec() {
  PromptSpec spec;
  Demonstration demo;
  demo.question = "w1 w2 w3 w4 w5";
  demo.choices = {"w6", "w7 w8", "w9"};
  demo.gold_answer = "w6";
  demo.rationale = "@support w6 w10 w11 w12";
  spec.demonstrations.push_back(demo);
  spec.validate();
  return spec;
}

PromptSpec load_prompt(const KeyValueConfig& config, const std::string& key) {
  const std::string path = config.get_string(key, "");
  if (path.empty()) return synthetic_prompt_spec();
  return PromptSpec::load(path);
}

std::unique_ptr<CompletionBackend> make_backend(const KeyValueConfig& config,
                                                const Datasets& data) {
  const std::string kind = config.get_string("backend", "knowledge");
  if (kind == "knowledge") {
    SyntheticRationaleRule rule;
    rule.leak_mode = parse_leak_mode(config.get_string("knowledge.leak", "deterministic"));
    rule.vocab_size = config.get_uint("knowledge.vocab_size", rule.vocab_size);
    rule.noise_length = config.get_uint("knowledge.noise_length", rule.noise_length);
    std::unordered_map<std::string, std::string> answers;
    auto add = [&answers](const DatasetSplit& split) {
      for (const auto& instance : split.instances) {
        answers.emplace(instance.question, instance.choices[instance.gold_index]);
      }
    };
    for (const auto& [role, split] : data.rationale_roles()) add(*split);
    if (data.ood) add(*data.ood);
    return std::make_unique<KnowledgeBackend>(rule, std::move(answers));
  }
  if (kind == "mock") return std::make_unique<MockBackend>();
  if (kind == "http") {
    const std::string url = config.get_string("backend_url", "");
    if (url.empty()) throw UsageError("backend = http needs backend_url");
    return std::make_unique<HttpBackend>(url,
                                         static_cast<int>(config.get_int("backend_timeout", 60)));
  }
  throw UsageError("unknown backend: " + kind);
}

std::shared_ptr<const Tokenizer> build_tokenizer(const Datasets& data,
                                                 const RationaleMap& rationales) {
  std::vector<std::string> texts;
  for (const auto* split : {&data.train, &data.dev}) {
    for (const auto& instance : split->instances) {
      texts.push_back(instance.question);
      for (const auto& c : instance.choices) texts.push_back(c);
      if (const auto it = rationales.find(instance.id); it != rationales.end()) {
        for (const auto& r : it->second.rationales) texts.push_back(r);
      }
    }
  }
  return std::make_shared<WordTokenizer>(WordTokenizer::from_texts(texts));
}

// Run directory ---------------------------------------------------------------

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunDirectory::RunDirectory(fs::path root, std::string command, KeyValueConfig config)
    : root_(std::move(root)), command_(std::move(command)), config_(std::move(config)) {
  for (const char* sub : {"checkpoints", "rationales", "reports", "logs"}) {
    fs::create_directories(root_ / sub);
  }
  const fs::path lock = root_ / ".lock";
  lock_fd_ = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (lock_fd_ < 0) {
    if (errno == EEXIST) {
      throw UsageError("run directory " + root_.string() +
                       " is in use by another command (remove .lock if stale)");
    }
    throw DataError("cannot lock " + root_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(lock_fd_, pid.data(), pid.size()) < 0) {
    spdlog::warn("cannot write pid into {}", lock.string());
  }
  started_ = utc_timestamp();
}

RunDirectory::~RunDirectory() {
  if (lock_fd_ >= 0) {
    ::close(lock_fd_);
    std::error_code ec;
    fs::remove(root_ / ".lock", ec);
  }
}

void RunDirectory::record(const std::string& name, const fs::path& file) {
  artifacts_[name] = fs::relative(file, root_).string();
}

void RunDirectory::write_text(const std::string& relative, const std::string& text) {
  write_file(root_ / relative, text);
  record(relative, root_ / relative);
}

void RunDirectory::finish() {
  const fs::path manifest_path = root_ / "manifest.json";
  ordered_json history = ordered_json::array();
  if (fs::exists(manifest_path)) {
    try {
      auto previous = ordered_json::parse(read_file(manifest_path));
      if (previous.contains("history")) history = previous["history"];
      previous.erase("history");
      history.push_back(previous);
    } catch (const nlohmann::json::exception& e) {
      spdlog::warn("replacing unreadable manifest: {}", e.what());
    }
  }
  ordered_json j;
  j["run_id"] = root_.filename().string();
  j["command"] = command_;
  auto& snapshot = j["config_snapshot"] = ordered_json::object();
  for (const auto& [k, v] : config_.values()) snapshot[k] = v;
  j["config_fingerprint"] = config_fingerprint(config_);
  j["seeds"] = config_seeds(config_);
  auto& artifacts = j["artifact_paths"] = ordered_json::object();
  for (const auto& [k, v] : artifacts_) artifacts[k] = v;
  j["timestamps"] = {{"start", started_}, {"end", utc_timestamp()}};
  j["history"] = history;
  write_file(manifest_path, j.dump(2) + "\n");
}

// Stages ------------------------------------------------------------------------

RationalizeOutcome run_rationalize(const KeyValueConfig& config, RunDirectory& run,
                                   CompletionBackend& backend, const Datasets& data) {
  const PromptSpec spec = load_prompt(config, "prompt");
  spec.validate();
  const GenerationOptions options = generation_options(config);
  const fs::path cache_path = run.path("rationales/cache.jsonl");
  RationaleCache cache(cache_path);
  RationalizeOutcome outcome;
  const std::size_t calls_before = backend.calls();
  for (const auto& [role, split] : data.rationale_roles()) {
    RationalizeStats stats;
    const auto sets = rationalize_split(backend, spec, *split, options, &cache, &stats);
    const fs::path out = run.path("rationales/" + role + ".jsonl");
    save_rationale_sets(sets, out);
    run.record("rationales/" + role + ".jsonl", out);
    outcome.stats[role] = stats;
  }
  if (fs::exists(cache_path)) run.record("rationales/cache.jsonl", cache_path);
  outcome.backend_calls = backend.calls() - calls_before;
  return outcome;
}

RationaleMap load_run_rationales(const RunDirectory& run, const Datasets& data) {
  RationaleMap map;
  for (const auto& [role, split] : data.rationale_roles()) {
    const fs::path file = run.path("rationales/" + role + ".jsonl");
    if (!fs::exists(file)) continue;
    for (auto& [id, set] : load_rationale_sets(file)) map[id] = std::move(set);
  }
  return map;
}

namespace {

bool uses_rationales(const TrainConfig& tc) { return tc.mode != TrainMode::kNoRationale; }

fs::path checkpoint_dir(const RunDirectory& run, std::uint64_t seed) {
  return run.path("checkpoints/seed-" + std::to_string(seed));
}

void record_tree(RunDirectory& run, const fs::path& dir) {
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      run.record(fs::relative(entry.path(), run.root()).string(), entry.path());
    }
  }
}

}  // namespace

TrainOutcome run_train(const KeyValueConfig& config, RunDirectory& run, const Datasets& data) {
  const TrainConfig base = train_config_from(config);
  const RationaleMap rationales = load_run_rationales(run, data);
  if (uses_rationales(base) && rationales.empty()) {
    throw MissingRationales("(run has no rationales; run `rationalize` first)");
  }
  const auto tokenizer = build_tokenizer(data, rationales);
  TrainOutcome outcome;
  for (const std::uint64_t seed : config_seeds(config)) {
    TrainConfig tc = base;
    tc.seed = seed;
    ToyReasoner model(tokenizer, model_config(config, seed));
    auto result = train(model, data.train, data.dev, rationales, tc);
    const fs::path dir = checkpoint_dir(run, seed);
    result.model->save(dir);
    write_file(dir / "train_config.json", tc.to_json() + "\n");
    record_tree(run, dir);
    run.write_text("logs/train-seed-" + std::to_string(seed) + ".jsonl", result.log.to_jsonl());
    spdlog::info("seed {}: best dev accuracy {:.4f} at epoch {}", seed, result.log.best_dev_acc,
                 result.log.best_epoch);
    outcome.seeds.push_back(seed);
    outcome.logs.push_back(std::move(result.log));
  }
  return outcome;
}

std::vector<std::string> parse_suite(const std::string& text) {
  static const std::set<std::string> known = {"accuracy", "las",           "stress",
                                              "oracle",   "ood",           "epsilon_sweep",
                                              "low_resource"};
  std::vector<std::string> suite = split_list(text);
  for (const auto& s : suite) {
    if (!known.count(s)) throw UsageError("unknown evaluation suite entry: " + s);
  }
  if (suite.empty()) throw UsageError("empty evaluation suite");
  return suite;
}

double masked_prediction_entropy(const ReasonerModel& model, const DatasetSplit& split,
                                 const RationaleMap& rationales) {
  if (split.empty()) throw EmptyPredictions();
  double total = 0.0;
  for (const auto& instance : split.instances) {
    const auto it = rationales.find(instance.id);
    if (it == rationales.end()) throw MissingRationales(instance.id);
    std::vector<double> rho;
    for (const auto& enc : encode_instance(instance, &it->second, model)) {
      rho.push_back(plausibility(model, perturb_mask(enc)));
    }
    for (double p : softmax(rho)) {
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(split.size());
}

namespace {

struct SeedContext {
  const KeyValueConfig& config;
  const Datasets& data;
  const RationaleMap& rationales;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::uint64_t seed;
};

double simulated_las(const SeedContext& ctx, const ReasonerModel& model, bool uses,
                     std::span<const PredictionRecord> test_preds) {
  const DatasetSplit& sim_split = ctx.data.sim ? *ctx.data.sim : ctx.data.dev;
  const auto sim_preds = predict(model, sim_split, uses ? &ctx.rationales : nullptr);
  InstanceMap instances = index_instances(sim_split);
  for (const auto& instance : ctx.data.test.instances) instances[instance.id] = instance;
  const Simulator simulator = train_simulator(sim_preds, instances, ctx.tokenizer, ctx.seed,
                                              simulator_config(ctx.config));
  return las(simulator, test_preds, instances).las;
}

std::unique_ptr<ReasonerModel> train_variant(const SeedContext& ctx, const TrainConfig& tc,
                                             const DatasetSplit& train_split) {
  ToyReasoner fresh(ctx.tokenizer, model_config(ctx.config, ctx.seed));
  return train(fresh, train_split, ctx.data.dev, ctx.rationales, tc).model;
}

}  // namespace

EvalReport run_evaluate(const KeyValueConfig& config, RunDirectory& run, const Datasets& data,
                        CompletionBackend& backend, const std::vector<std::string>& suite) {
  if (data.test.empty()) throw UsageError("data.test is not set");
  const TrainConfig base = train_config_from(config);
  const bool uses = uses_rationales(base);
  const RationaleMap rationales = load_run_rationales(run, data);
  const RationaleMap* test_map = uses ? &rationales : nullptr;
  const PromptSpec spec = load_prompt(config, "prompt");
  const GenerationOptions options = generation_options(config);
  RationaleCache cache(run.path("rationales/cache.jsonl"));
  auto wants = [&suite](const std::string& s) {
    return std::find(suite.begin(), suite.end(), s) != suite.end();
  };

  EvalReport report;
  report.method = config.get_string("method", "");
  if (report.method.empty()) report.method = std::string(to_string(base.mode));
  report.n = data.test.size();
  report.config_fingerprint = config_fingerprint(config);
  report.seeds = config_seeds(config);
  report.notes = protocol_notes();
  report.notes["mode"] = std::string(to_string(base.mode));
  report.notes["suite"] = config.get_string("suite", "");

  std::map<std::string, std::vector<double>> values;
  for (const std::uint64_t seed : report.seeds) {
    const fs::path dir = checkpoint_dir(run, seed);
    if (!fs::exists(dir / "model.bin")) {
      throw DataError("no checkpoint for seed " + std::to_string(seed) + " in " +
                      run.root().string() + " (run `train` first)");
    }
    const auto model = ToyReasoner::load(dir);
    std::shared_ptr<const Tokenizer> tokenizer = load_tokenizer(dir / "vocab.txt");
    const SeedContext ctx{config, data, rationales, tokenizer, seed};
    const std::string tag = "seed-" + std::to_string(seed);

    const auto test_preds = predict(*model, data.test, test_map);
    if (wants("accuracy") || wants("las")) {
      values["accuracy"].push_back(accuracy(test_preds));
      save_prediction_records(test_preds, run.path("reports/records-" + tag + ".jsonl"));
      run.record("reports/records-" + tag + ".jsonl", run.path("reports/records-" + tag + ".jsonl"));
      save_predictions(test_preds, run.path("reports/predictions-" + tag + ".jsonl"));
      run.record("reports/predictions-" + tag + ".jsonl",
                 run.path("reports/predictions-" + tag + ".jsonl"));
    }
    if (wants("las")) values["las"].push_back(simulated_las(ctx, *model, uses, test_preds));
    if (wants("stress")) {
      const auto stress = stress_test(*model, backend, spec, data.test, rationales, seed, uses,
                                      options, &cache);
      values["stress.clean_accuracy"].push_back(stress.clean_accuracy);
      values["stress.perturbed_accuracy"].push_back(stress.perturbed_accuracy);
      values["sensitivity_drop"].push_back(stress.drop);
      values["sensitivity_drop_points"].push_back(stress.drop * 100.0);
      const fs::path out = run.path("reports/stress-records-" + tag + ".jsonl");
      save_prediction_records(stress.perturbed, out);
      run.record("reports/stress-records-" + tag + ".jsonl", out);
    }
    if (wants("oracle")) {
      if (!uses) throw UsageError("oracle evaluation needs a rationale-reading model");
      const auto oracle = oracle_eval(*model, data.test, rationales);
      values["oracle.accuracy"].push_back(oracle.oracle_accuracy);
      values["oracle.generated_accuracy"].push_back(oracle.generated_accuracy);
      values["oracle.delta"].push_back(oracle.delta);
      const auto gold_only = oracle_eval(*model, data.test, rationales, OracleRule::kGoldOnly);
      values["oracle.gold_only.accuracy"].push_back(gold_only.oracle_accuracy);
      values["oracle.gold_only.delta"].push_back(gold_only.delta);
    }
    if (wants("ood")) {
      if (!data.ood) throw UsageError("suite ood needs data.ood");
      const PromptSpec ood_spec = config.get_string("ood_prompt", "").empty()
                                      ? spec
                                      : load_prompt(config, "ood_prompt");
      const auto ood = ood_eval(*model, data.train.source_dataset, *data.ood, backend, ood_spec,
                                uses, options, &cache);
      values["ood.accuracy"].push_back(ood.accuracy);
    }
    if (wants("epsilon_sweep")) {
      for (const double eps : parse_doubles(config.get_list("sweep.epsilons", {}), "epsilon")) {
        TrainConfig tc = base;
        tc.mode = TrainMode::kCounterfactual;
        if (tc.strategies.empty()) tc.strategies = {Strategy::kMask, Strategy::kReplace};
        tc.epsilon = eps;
        tc.seed = seed;
        const auto variant = train_variant(ctx, tc, data.train);
        const auto preds = predict(*variant, data.test, &rationales);
        const std::string key = "sweep.epsilon=" + number_label(eps);
        values[key + ".accuracy"].push_back(accuracy(preds));
        values[key + ".las"].push_back(simulated_las(ctx, *variant, true, preds));
        values[key + ".masked_entropy"].push_back(
            masked_prediction_entropy(*variant, data.test, rationales));
      }
    }
    if (wants("low_resource")) {
      for (const double fraction :
           parse_doubles(config.get_list("low_resource.fractions", {}), "fraction")) {
        TrainConfig tc = base;
        tc.seed = seed;
        const auto subset = subsample_train(data.train, fraction, seed);
        const auto variant = train_variant(ctx, tc, subset);
        values["low_resource.fraction=" + number_label(fraction) + ".accuracy"].push_back(
            accuracy(predict(*variant, data.test, test_map)));
      }
    }
    spdlog::info("evaluated seed {}", seed);
  }
  for (const auto& [metric, per_seed] : values) report.add(metric, per_seed);
  run.write_text("reports/eval.json", report.to_json());
  return report;
}

std::map<std::string, MethodMetrics> metrics_from_reports(const std::vector<fs::path>& reports) {
  std::map<std::string, MethodMetrics> out;
  for (const auto& path : reports) {
    try {
      const auto j = nlohmann::json::parse(read_file(path));
      const std::string method = j.at("method").get<std::string>();
      MethodMetrics m;
      m.accuracy = j.at("metrics").at("accuracy").at("mean").get<double>();
      m.las = j.at("metrics").at("las").at("mean").get<double>();
      if (!out.emplace(method, m).second) {
        throw DataError("method " + method + " appears in more than one report");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + " lacks accuracy/las: " + e.what());
    }
  }
  return out;
}

std::map<std::string, MethodMetrics> metrics_from_csv(const fs::path& path) {
  std::map<std::string, MethodMetrics> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;  // header
    const auto cells = split_list(line);
    if (cells.size() < 3) throw MalformedRecord(line_no, "expected method,accuracy,las");
    KeyValueConfig row;
    row.set("accuracy", cells[1]);
    row.set("las", cells[2]);
    out[cells[0]] = MethodMetrics{row.get_double("accuracy", 0.0), row.get_double("las", 0.0)};
  }
  return out;
}

std::string nrg_json(const std::map<std::string, MethodMetrics>& metrics,
                     const std::map<std::string, double>& scores) {
  ordered_json j;
  auto& methods = j["methods"] = ordered_json::object();
  for (const auto& [name, m] : metrics) {
    methods[name] = {{"accuracy", m.accuracy}, {"las", m.las}, {"nrg", scores.at(name)}};
  }
  return j.dump(2) + "\n";
}

// Synthetic corpus files ------------------------------------------------------

namespace {

std::optional<double> cue_rate(const std::string& text, std::size_t n_choices) {
  if (text == "none") return std::nullopt;
  if (text == "auto") return 1.0 / static_cast<double>(n_choices);
  KeyValueConfig one;
  one.set("cue", text);
  return one.get_double("cue", 0.0);
}

}  // namespace

SynthOutcome write_synthetic_workspace(const KeyValueConfig& config, const fs::path& out) {
  fs::create_directories(out);
  SyntheticOptions base;
  base.n_choices = config.get_uint("synth.choices", 4);
  base.vocab_size = config.get_uint("synth.vocab_size", 48);
  base.leak_mode = parse_leak_mode(config.get_string("synth.leak", "deterministic"));
  const std::uint64_t seed = config.get_uint("synth.seed", 1);
  const auto cue_train = cue_rate(config.get_string("synth.cue_train", "none"), base.n_choices);
  const auto cue_eval = cue_train ? cue_rate(config.get_string("synth.cue_eval", "auto"),
                                             base.n_choices)
                                  : std::nullopt;

  SynthOutcome outcome;
  auto emit = [&](const char* name, std::size_t n, std::uint64_t s, SplitName split,
                  std::optional<double> cue, std::string source, std::size_t offset) {
    SyntheticOptions o = base;
    o.n = n;
    o.seed = s;
    o.id_prefix = name;
    o.split_name = split;
    o.cue_gold_rate = cue;
    o.source_dataset = std::move(source);
    o.question_offset = offset;
    const auto corpus = generate_synthetic(o);
    const fs::path file = out / (std::string(name) + ".jsonl");
    save_dataset(corpus.split, file);
    outcome.files.push_back(file);
  };
  emit("train", config.get_uint("synth.n_train", 500), seed, SplitName::kTrain, cue_train,
       "synthetic", 0);
  emit("test", config.get_uint("synth.n_test", 100), seed + 1000, SplitName::kTest, cue_eval,
       "synthetic", 0);
  emit("sim", config.get_uint("synth.n_sim", 200), seed + 2000, SplitName::kTest, cue_eval,
       "synthetic", 0);
  emit("ood", config.get_uint("synth.n_ood", 100), seed + 3000, SplitName::kTest, std::nullopt,
       "synthetic-ood", config.get_uint("synth.ood_offset", 1000));

  write_file(out / "prompt.json", synthetic_prompt_spec().to_json() + "\n");
  outcome.files.push_back(out / "prompt.json");

  const std::string conf = fmt::format(
      "# Synthetic workspace written by `rtr synth`.\n"
      "data.train = train.jsonl\n"
      "data.test = test.jsonl\n"
      "data.sim = sim.jsonl\n"
      "data.ood = ood.jsonl\n"
      "data.source = synthetic\n"
      "data.ood_source = synthetic-ood\n"
      "prompt = prompt.json\n"
      "backend = knowledge\n"
      "knowledge.leak = {}\n"
      "knowledge.vocab_size = {}\n",
      to_string(base.leak_mode), base.vocab_size);
  write_file(out / "rtr.conf", conf);
  outcome.files.push_back(out / "rtr.conf");
  return outcome;
}

}  // namespace rtr
