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

// rtr: rationalize, train, evaluate and report from the command line.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 backend, 4 numerical.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fmt/format.h"
#include "rtr/error.h"
#include "rtr/pipeline.h"
#include "spdlog/sinks/stdout_color_sinks.h"
#include "spdlog/spdlog.h"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kBackend = 3, kNumerical = 4 };

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string backend_url;
  std::string mock_backend;
  std::string mode;
  std::optional<double> epsilon;
  std::optional<double> replace_rate;
  std::string suite;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Key=value config file")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "Override one config key (key=value); repeatable");
  app->add_option("--seed", f.seed, "Single seed (overrides seeds)");
  app->add_option("--seeds", f.seeds, "Comma-separated seeds");
  app->add_option("--backend-url", f.backend_url, "HTTP completion endpoint");
  app->add_option("--mock-backend", f.mock_backend, "Offline backend: knowledge or mock")
      ->check(CLI::IsMember({"knowledge", "mock"}));
  app->add_option("--mode", f.mode, "counterfactual, standard, dropout_context, no_rationale");
  app->add_option("--epsilon", f.epsilon, "Label smoothing factor");
  app->add_option("--replace-rate", f.replace_rate, "Fraction of rationale tokens replaced");
  app->add_option("--suite", f.suite,
                  "accuracy,las,stress,oracle,ood,epsilon_sweep,low_resource");
  app->add_option("--out", f.out, "Run directory (workspace directory for synth)");
  app->add_flag("-q,--quiet", f.quiet, "Only log warnings and errors");
}

rtr::KeyValueConfig overrides_from(const CommonFlags& f) {
  rtr::KeyValueConfig o;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw rtr::UsageError("--set expects key=value, got " + s);
    o.merge(rtr::KeyValueConfig::parse(s, "--set"));
  }
  if (f.seed) o.set("seeds", std::to_string(*f.seed));
  if (!f.seeds.empty()) o.set("seeds", f.seeds);
  if (!f.backend_url.empty()) {
    o.set("backend", "http");
    o.set("backend_url", f.backend_url);
  }
  if (!f.mock_backend.empty()) o.set("backend", f.mock_backend);
  if (!f.mode.empty()) o.set("mode", f.mode);
  if (f.epsilon) o.set("epsilon", fmt::format("{}", *f.epsilon));
  if (f.replace_rate) o.set("replace_rate", fmt::format("{}", *f.replace_rate));
  if (!f.suite.empty()) o.set("suite", f.suite);
  if (!f.out.empty()) o.set("run_dir", f.out);
  return o;
}

rtr::KeyValueConfig resolved(const CommonFlags& f) {
  std::optional<fs::path> file;
  if (!f.config.empty()) file = f.config;
  return rtr::resolve_config(file, overrides_from(f));
}

fs::path run_root(const rtr::KeyValueConfig& config) {
  const std::string dir = config.get_string("run_dir", "");
  if (!dir.empty()) return dir;
  return fs::path("runs") / config.get_string("run_id", "default");
}

int cmd_rationalize(const CommonFlags& f) {
  const auto config = resolved(f);
  const auto data = rtr::load_datasets(config);
  auto backend = rtr::make_backend(config, data);
  rtr::RunDirectory run(run_root(config), "rationalize", config);
  const auto outcome = rtr::run_rationalize(config, run, *backend, data);
  for (const auto& [role, s] : outcome.stats) {
    std::cout << fmt::format("{}: {}/{} instances ({} cached, {} generated)\n", role,
                             s.cached + s.generated, s.total, s.cached, s.generated);
  }
  std::cout << fmt::format("backend calls: {}\n", outcome.backend_calls);
  run.finish();
  return kOk;
}

int cmd_train(const CommonFlags& f) {
  const auto config = resolved(f);
  const auto data = rtr::load_datasets(config);
  rtr::RunDirectory run(run_root(config), "train", config);
  const auto outcome = rtr::run_train(config, run, data);
  for (std::size_t i = 0; i < outcome.seeds.size(); ++i) {
    std::cout << fmt::format("seed {}: best dev accuracy {:.4f} (epoch {})\n", outcome.seeds[i],
                             outcome.logs[i].best_dev_acc, outcome.logs[i].best_epoch);
  }
  run.finish();
  return kOk;
}

int cmd_evaluate(const CommonFlags& f, const std::optional<std::string>& forced_suite,
                 const std::string& command) {
  auto config = resolved(f);
  if (forced_suite) config.set("suite", *forced_suite);
  const auto suite = rtr::parse_suite(config.get_string("suite", "accuracy"));
  const auto data = rtr::load_datasets(config);
  auto backend = rtr::make_backend(config, data);
  rtr::RunDirectory run(run_root(config), command, config);
  const auto report = rtr::run_evaluate(config, run, data, *backend, suite);
  for (const auto& [name, s] : report.metrics) {
    std::cout << fmt::format("{:<40} {:.4f} ± {:.4f}\n", name, s.mean, s.stddev);
  }
  run.finish();
  return kOk;
}

int cmd_report(const CommonFlags& f, const std::vector<std::string>& reports,
               const std::string& table) {
  if (reports.empty() == table.empty()) {
    throw rtr::UsageError("report needs either eval.json reports or --table");
  }
  std::vector<fs::path> paths(reports.begin(), reports.end());
  const auto metrics = table.empty() ? rtr::metrics_from_reports(paths)
                                     : rtr::metrics_from_csv(table);
  const auto scores = rtr::nrg(metrics);
  const std::string csv = rtr::nrg_csv(metrics, scores);
  if (f.out.empty()) {
    std::cout << csv;
    return kOk;
  }
  fs::create_directories(f.out);
  std::ofstream(fs::path(f.out) / "nrg.csv", std::ios::binary) << csv;
  std::ofstream(fs::path(f.out) / "nrg.json", std::ios::binary) << rtr::nrg_json(metrics, scores);
  std::cout << csv;
  return kOk;
}

int cmd_synth(const CommonFlags& f) {
  if (f.out.empty()) throw rtr::UsageError("synth needs --out");
  auto overrides = overrides_from(f);
  if (f.seed) overrides.set("synth.seed", std::to_string(*f.seed));
  std::optional<fs::path> file;
  if (!f.config.empty()) file = f.config;
  const auto config = rtr::resolve_config(file, overrides);
  const auto outcome = rtr::write_synthetic_workspace(config, f.out);
  for (const auto& p : outcome.files) std::cout << p.string() << "\n";
  return kOk;
}

int exit_code_for(rtr::ErrorKind kind) {
  switch (kind) {
    case rtr::ErrorKind::kUsage: return kUsage;
    case rtr::ErrorKind::kData: return kData;
    case rtr::ErrorKind::kBackend: return kBackend;
    case rtr::ErrorKind::kNumerical: return kNumerical;
  }
  return kData;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("rtr"));
  CLI::App app{"Rationalize-then-reason pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::vector<std::string> reports;
  std::string table;
  auto* rationalize = app.add_subcommand("rationalize", "Generate choice-specific rationales");
  auto* train = app.add_subcommand("train", "Train one reasoner per seed");
  auto* evaluate = app.add_subcommand("evaluate", "Run an evaluation suite");
  auto* stress = app.add_subcommand("stress", "Run the question-substitution stress test");
  auto* report = app.add_subcommand("report", "Cross-method NRG table");
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus workspace");
  for (auto* sub : {rationalize, train, evaluate, stress, report, synth}) add_common(sub, flags);
  report->add_option("reports", reports, "eval.json files, one per method");
  report->add_option("--table", table, "CSV with method,accuracy,las columns")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (flags.quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*rationalize) return cmd_rationalize(flags);
    if (*train) return cmd_train(flags);
    if (*evaluate) return cmd_evaluate(flags, std::nullopt, "evaluate");
    if (*stress) return cmd_evaluate(flags, std::string("stress"), "stress");
    if (*report) return cmd_report(flags, reports, table);
    if (*synth) return cmd_synth(flags);
  } catch (const rtr::Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kData;
  }
  return kUsage;
}
