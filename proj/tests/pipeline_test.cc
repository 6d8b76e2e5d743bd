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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"
#include "rtr/error.h"
#include "test_support.h"

namespace rtr {
namespace {

namespace fs = std::filesystem;
using testing::read_file;
using testing::TempDir;

// Tiny workspace so every stage runs in well under a second per seed.
KeyValueConfig tiny_overrides() {
  return KeyValueConfig::parse(
      "synth.n_train = 60\n"
      "synth.n_test = 20\n"
      "synth.n_sim = 20\n"
      "synth.n_ood = 20\n"
      "epochs = 2\n"
      "simulator.epochs = 2\n"
      "seeds = 1\n",
      "<test>");
}

struct Workspace {
  TempDir dir;
  KeyValueConfig config;
  Datasets data;
  std::unique_ptr<CompletionBackend> backend;

  explicit Workspace(const KeyValueConfig& extra = {}) {
    KeyValueConfig overrides = tiny_overrides();
    overrides.merge(extra);
    write_synthetic_workspace(resolve_config(std::nullopt, overrides), dir / "ws");
    config = resolve_config(dir / "ws" / "rtr.conf", overrides);
    data = load_datasets(config);
    backend = make_backend(config, data);
  }

  fs::path run_root(const std::string& name) const { return dir / "runs" / name; }

  // rationalize + train into one run directory.
  TrainOutcome prepare(const std::string& name, const KeyValueConfig& cfg) {
    {
      RunDirectory run(run_root(name), "rationalize", cfg);
      run_rationalize(cfg, run, *backend, data);
      run.finish();
    }
    RunDirectory run(run_root(name), "train", cfg);
    auto outcome = run_train(cfg, run, data);
    run.finish();
    return outcome;
  }

  KeyValueConfig with(const std::string& text) const {
    KeyValueConfig c = config;
    c.merge(KeyValueConfig::parse(text, "<test>"));
    return c;
  }
};

std::set<std::string> metric_names(const EvalReport& report) {
  std::set<std::string> names;
  for (const auto& [name, s] : report.metrics) names.insert(name);
  return names;
}

TEST(SynthWorkspace, WritesLoadableSplits) {
  Workspace ws;
  for (const char* f : {"train.jsonl", "test.jsonl", "sim.jsonl", "ood.jsonl", "prompt.json",
                        "rtr.conf"}) {
    EXPECT_TRUE(fs::exists(ws.dir / "ws" / f)) << f;
  }
  EXPECT_EQ(ws.data.train.size() + ws.data.dev.size(), 60u);
  EXPECT_TRUE(ws.data.dev_from_train);
  EXPECT_EQ(ws.data.test.size(), 20u);
  ASSERT_TRUE(ws.data.sim.has_value());
  EXPECT_EQ(ws.data.sim->size(), 20u);
  ASSERT_TRUE(ws.data.ood.has_value());
  EXPECT_NE(ws.data.ood->source_dataset, ws.data.train.source_dataset);
}

TEST(SynthWorkspace, SameSeedSameBytes) {
  TempDir a, b;
  const auto cfg = resolve_config(std::nullopt, tiny_overrides());
  write_synthetic_workspace(cfg, a / "ws");
  write_synthetic_workspace(cfg, b / "ws");
  for (const char* f : {"train.jsonl", "test.jsonl", "sim.jsonl", "ood.jsonl"}) {
    EXPECT_EQ(read_file(a / "ws" / f), read_file(b / "ws" / f)) << f;
  }
}

TEST(ConfigResolution, RelativePathsResolveAgainstConfigFile) {
  Workspace ws;
  const fs::path train = ws.config.get_string("data.train", "");
  EXPECT_TRUE(train.is_absolute());
  EXPECT_EQ(train, (ws.dir / "ws" / "train.jsonl").lexically_normal());
}

TEST(ConfigResolution, OverridesWinOverFileAndDefaults) {
  Workspace ws;
  EXPECT_EQ(ws.config.get_string("epochs", ""), "2");
  EXPECT_EQ(ws.config.get_string("backend", ""), "knowledge");
  EXPECT_EQ(ws.config.get_string("optimizer", ""), "adam");
}

TEST(ConfigResolution, FingerprintIgnoresPathsButNotHyperparameters) {
  const auto base = resolve_config(std::nullopt, tiny_overrides());
  KeyValueConfig moved = base;
  moved.set("run_dir", "/elsewhere");
  moved.set("data.train", "/elsewhere/train.jsonl");
  EXPECT_EQ(config_fingerprint(base), config_fingerprint(moved));
  KeyValueConfig changed = base;
  changed.set("epsilon", "0.2");
  EXPECT_NE(config_fingerprint(base), config_fingerprint(changed));
}

TEST(ConfigResolution, SeedsParse) {
  KeyValueConfig c;
  c.set("seeds", "1,2,3,4");
  EXPECT_EQ(config_seeds(c), (std::vector<std::uint64_t>{1, 2, 3, 4}));
  c.set("seeds", "");
  EXPECT_THROW(config_seeds(c), UsageError);
}

TEST(RunDirectoryTest, SecondWriterIsRefused) {
  TempDir dir;
  const auto cfg = resolve_config(std::nullopt, tiny_overrides());
  {
    RunDirectory first(dir / "run", "train", cfg);
    EXPECT_THROW(RunDirectory(dir / "run", "evaluate", cfg), UsageError);
  }
  EXPECT_FALSE(fs::exists(dir / "run" / ".lock"));
  EXPECT_NO_THROW(RunDirectory(dir / "run", "evaluate", cfg));
}

TEST(RunDirectoryTest, ManifestKeepsHistoryAndListsExistingArtifacts) {
  Workspace ws;
  ws.prepare("m", ws.config);
  const auto j = nlohmann::json::parse(read_file(ws.run_root("m") / "manifest.json"));
  EXPECT_EQ(j.at("run_id"), "m");
  EXPECT_EQ(j.at("command"), "train");
  EXPECT_EQ(j.at("config_fingerprint"), config_fingerprint(ws.config));
  EXPECT_EQ(j.at("seeds"), nlohmann::json::array({1}));
  EXPECT_TRUE(j.at("timestamps").contains("start"));
  EXPECT_TRUE(j.at("timestamps").contains("end"));
  EXPECT_EQ(j.at("config_snapshot").at("mode"), "counterfactual");
  ASSERT_EQ(j.at("history").size(), 1u);
  EXPECT_EQ(j.at("history")[0].at("command"), "rationalize");
  EXPECT_TRUE(j.at("history")[0].at("artifact_paths").contains("rationales/train.jsonl"));
  const auto& artifacts = j.at("artifact_paths");
  EXPECT_TRUE(artifacts.contains("logs/train-seed-1.jsonl"));
  EXPECT_TRUE(artifacts.contains("checkpoints/seed-1/model.bin"));
  for (const auto& [name, rel] : artifacts.items()) {
    EXPECT_TRUE(fs::exists(ws.run_root("m") / rel.get<std::string>())) << name;
  }
}

TEST(Rationalize, SecondPassIsServedFromCache) {
  Workspace ws;
  RunDirectory run(ws.run_root("c"), "rationalize", ws.config);
  const auto first = run_rationalize(ws.config, run, *ws.backend, ws.data);
  EXPECT_GT(first.backend_calls, 0u);
  const auto second = run_rationalize(ws.config, run, *ws.backend, ws.data);
  EXPECT_EQ(second.backend_calls, 0u);
  EXPECT_EQ(second.stats.at("train").generated, 0u);
  EXPECT_EQ(second.stats.at("train").cached, second.stats.at("train").total);
}

TEST(Train, OneCheckpointAndLogPerSeed) {
  Workspace ws;
  const auto outcome = ws.prepare("s", ws.with("seeds = 1,2,3,4\nepochs = 1\n"));
  EXPECT_EQ(outcome.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4}));
  for (int seed = 1; seed <= 4; ++seed) {
    const auto tag = std::to_string(seed);
    EXPECT_TRUE(fs::exists(ws.run_root("s") / ("checkpoints/seed-" + tag) / "model.bin"));
    EXPECT_TRUE(fs::exists(ws.run_root("s") / ("logs/train-seed-" + tag + ".jsonl")));
  }
}

TEST(Train, StandardModeLogsNoPerturbations) {
  Workspace ws;
  const auto outcome = ws.prepare("std", ws.with("mode = standard\n"));
  for (const auto& log : outcome.logs) {
    for (const auto& epoch : log.epochs) {
      EXPECT_EQ(epoch.mask_count, 0u);
      EXPECT_EQ(epoch.replace_count, 0u);
    }
  }
  const std::string text = read_file(ws.run_root("std") / "logs/train-seed-1.jsonl");
  EXPECT_NE(text.find("strategy_counts"), std::string::npos);
}

TEST(Train, CounterfactualModeLogsPerturbations) {
  Workspace ws;
  const auto outcome = ws.prepare("cf", ws.config);
  std::size_t total = 0;
  for (const auto& epoch : outcome.logs.at(0).epochs) total += epoch.mask_count + epoch.replace_count;
  EXPECT_GT(total, 0u);
}

TEST(Train, IdenticalRunsGiveIdenticalLogsAndCheckpoints) {
  Workspace ws;
  ws.prepare("a", ws.config);
  ws.prepare("b", ws.config);
  for (const char* f : {"logs/train-seed-1.jsonl", "checkpoints/seed-1/model.bin"}) {
    EXPECT_EQ(read_file(ws.run_root("a") / f), read_file(ws.run_root("b") / f)) << f;
  }
}

TEST(Train, NeedsRationalesUnlessNoRationaleMode) {
  Workspace ws;
  {
    RunDirectory run(ws.run_root("bare"), "train", ws.config);
    EXPECT_THROW(run_train(ws.config, run, ws.data), MissingRationales);
  }
  const auto cfg = ws.with("mode = no_rationale\n");
  RunDirectory run(ws.run_root("bare"), "train", cfg);
  EXPECT_NO_THROW(run_train(cfg, run, ws.data));
}

TEST(Evaluate, AccuracySuiteReportsOnlyAccuracy) {
  Workspace ws;
  const auto cfg = ws.with("suite = accuracy\n");
  ws.prepare("e", cfg);
  RunDirectory run(ws.run_root("e"), "evaluate", cfg);
  const auto report = run_evaluate(cfg, run, ws.data, *ws.backend, parse_suite("accuracy"));
  EXPECT_EQ(metric_names(report), std::set<std::string>{"accuracy"});
  EXPECT_TRUE(fs::exists(ws.run_root("e") / "reports/eval.json"));
  EXPECT_TRUE(fs::exists(ws.run_root("e") / "reports/predictions-seed-1.jsonl"));
}

TEST(Evaluate, MissingCheckpointIsADataError) {
  Workspace ws;
  RunDirectory run(ws.run_root("none"), "evaluate", ws.config);
  EXPECT_THROW(run_evaluate(ws.config, run, ws.data, *ws.backend, parse_suite("accuracy")),
               DataError);
}

TEST(Evaluate, SweepEmitsTenPairs) {
  Workspace ws;
  const auto cfg = ws.with("epochs = 1\n");
  ws.prepare("sw", cfg);
  RunDirectory run(ws.run_root("sw"), "evaluate", cfg);
  const auto report = run_evaluate(cfg, run, ws.data, *ws.backend, parse_suite("epsilon_sweep"));
  std::size_t acc = 0, las = 0, entropy = 0;
  for (const auto& name : metric_names(report)) {
    ASSERT_EQ(name.rfind("sweep.epsilon=", 0), 0u) << name;
    acc += name.ends_with(".accuracy");
    las += name.ends_with(".las");
    entropy += name.ends_with(".masked_entropy");
  }
  EXPECT_EQ(acc, 10u);
  EXPECT_EQ(las, 10u);
  EXPECT_EQ(entropy, 10u);
  EXPECT_TRUE(report.metrics.count("sweep.epsilon=0.1.accuracy"));
  EXPECT_TRUE(report.metrics.count("sweep.epsilon=1.accuracy"));
}

TEST(Evaluate, LowResourceEmitsFivePoints) {
  Workspace ws;
  const auto cfg = ws.with("epochs = 1\n");
  ws.prepare("lr", cfg);
  RunDirectory run(ws.run_root("lr"), "evaluate", cfg);
  const auto report = run_evaluate(cfg, run, ws.data, *ws.backend, parse_suite("low_resource"));
  EXPECT_EQ(report.metrics.size(), 5u);
  for (const auto& name : metric_names(report)) {
    EXPECT_EQ(name.rfind("low_resource.fraction=", 0), 0u) << name;
  }
}

TEST(Evaluate, StressAndOodMetricsPresent) {
  Workspace ws;
  ws.prepare("st", ws.config);
  RunDirectory run(ws.run_root("st"), "evaluate", ws.config);
  const auto report =
      run_evaluate(ws.config, run, ws.data, *ws.backend, parse_suite("stress,ood,oracle"));
  for (const char* m : {"stress.clean_accuracy", "stress.perturbed_accuracy", "sensitivity_drop",
                        "sensitivity_drop_points", "ood.accuracy", "oracle.accuracy",
                        "oracle.delta"}) {
    EXPECT_TRUE(report.metrics.count(m)) << m;
  }
  const auto& drop = report.metrics.at("sensitivity_drop");
  EXPECT_DOUBLE_EQ(report.metrics.at("sensitivity_drop_points").mean, drop.mean * 100.0);
}

TEST(Evaluate, UnknownSuiteEntryIsAUsageError) {
  EXPECT_THROW(parse_suite("accuracy,bogus"), UsageError);
  EXPECT_THROW(parse_suite(""), UsageError);
}

TEST(ReportNrg, ReadsEvalReports) {
  Workspace ws;
  std::vector<fs::path> reports;
  for (const std::string mode : {"counterfactual", "standard"}) {
    const auto cfg = ws.with("mode = " + mode + "\n");
    ws.prepare(mode, cfg);
    RunDirectory run(ws.run_root(mode), "evaluate", cfg);
    run_evaluate(cfg, run, ws.data, *ws.backend, parse_suite("accuracy,las"));
    reports.push_back(ws.run_root(mode) / "reports/eval.json");
  }
  const auto metrics = metrics_from_reports(reports);
  EXPECT_EQ(metrics.size(), 2u);
  EXPECT_TRUE(metrics.count("counterfactual"));
  EXPECT_TRUE(metrics.count("standard"));
  reports.push_back(reports.front());
  EXPECT_THROW(metrics_from_reports(reports), DataError);
}

TEST(ShippedPrompts, LoadAndRender) {
  const fs::path dir = fs::path(RTR_SOURCE_DIR) / "prompts";
  const auto csqa = PromptSpec::load(dir / "csqa.json");
  EXPECT_EQ(csqa.demonstrations.size(), 7u);
  EXPECT_NE(render_prompt(csqa, "q?", {"a", "b"}, "b").find("Answer Choices: (a) a (b) b"),
            std::string::npos);
  const auto yes_no = PromptSpec::load(dir / "strategyqa.json");
  EXPECT_EQ(yes_no.template_id, "no_choices");
  EXPECT_EQ(render_prompt(yes_no, "q?", {"yes", "no"}, "no").find("Answer Choices"),
            std::string::npos);
  EXPECT_EQ(PromptSpec::load(dir / "synthetic.json").to_json(), synthetic_prompt_spec().to_json());
}

// CLI exit codes -------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RTR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, UnknownFlagIsUsage) { EXPECT_EQ(run_cli("train --no-such-flag"), 1); }

TEST(Cli, MissingDataFileIsData) {
  TempDir dir;
  EXPECT_EQ(run_cli("train -q --set data.train=" + (dir / "absent.jsonl").string() +
                    " --out " + (dir / "run").string()),
            2);
}

TEST(Cli, UnreachableBackendIsBackend) {
  Workspace ws;
  EXPECT_EQ(run_cli("rationalize -q --config " + (ws.dir / "ws/rtr.conf").string() +
                    " --set generation.max_attempts=1 --backend-url http://127.0.0.1:9" +
                    " --out " + ws.run_root("http").string()),
            3);
}

TEST(Cli, SynthThenTrainSucceeds) {
  TempDir dir;
  const std::string ws = (dir / "ws").string();
  ASSERT_EQ(run_cli("synth -q --out " + ws + " --set synth.n_train=40 --set synth.n_test=10"), 0);
  const std::string common = " -q --config " + ws + "/rtr.conf --set epochs=1 --seeds 1 --out " +
                             (dir / "run").string();
  EXPECT_EQ(run_cli("rationalize" + common), 0);
  EXPECT_EQ(run_cli("train" + common), 0);
  EXPECT_EQ(run_cli("evaluate --suite accuracy" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "run/reports/eval.json"));
}

}  // namespace
}  // namespace rtr
