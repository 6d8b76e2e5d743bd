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


#ifndef RTR_PIPELINE_H_
#define RTR_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtr/config.h"
#include "rtr/dataset.h"
#include "rtr/evaluator.h"
#include "rtr/rationalizer.h"
#include "rtr/reasoner.h"
#include "rtr/trainer.h"

namespace rtr {

// Every recognised key with its default value. Resolved configs start from
// this, so snapshots list the complete configuration.
KeyValueConfig default_config();
// defaults < file < overrides. Relative data and prompt paths become
// absolute: file values against the file's directory, overrides against the
// working directory.
KeyValueConfig resolve_config(const std::optional<std::filesystem::path>& file,
                              const KeyValueConfig& overrides);

std::vector<std::uint64_t> config_seeds(const KeyValueConfig& config);
ToyReasonerConfig model_config(const KeyValueConfig& config, std::uint64_t seed);
SimulatorConfig simulator_config(const KeyValueConfig& config);
GenerationOptions generation_options(const KeyValueConfig& config);
// Short hash of the resolved configuration, minus paths that do not change
// results (run_dir).
std::string config_fingerprint(const KeyValueConfig& config);

// Data ----------------------------------------------------------------------

struct Datasets {
  DatasetSplit train;
  DatasetSplit dev;
  DatasetSplit test;
  // Records the LAS simulator learns from; the dev split when unset.
  std::optional<DatasetSplit> sim;
  std::optional<DatasetSplit> ood;
  // True when dev was carved out of data.train.
  bool dev_from_train = false;

  // Splits whose rationales the run generates, keyed by role.
  std::vector<std::pair<std::string, const DatasetSplit*>> rationale_roles() const;
};

// Reads data.train/dev/test/sim/ood. Without data.dev, dev is carved out of
// train with dev_fraction and dev_seed.
Datasets load_datasets(const KeyValueConfig& config);

PromptSpec synthetic_prompt_spec();
// The built-in synthetic prompt when the key is empty.
PromptSpec load_prompt(const KeyValueConfig& config, const std::string& key);

// backend = knowledge | mock | http.
std::unique_ptr<CompletionBackend> make_backend(const KeyValueConfig& config,
                                                const Datasets& data);

// Word vocabulary over train and dev questions, choices and rationales.
std::shared_ptr<const Tokenizer> build_tokenizer(const Datasets& data,
                                                 const RationaleMap& rationales);

// Run directory ---------------------------------------------------------------

// runs/<run_id>/{manifest.json, checkpoints/, rationales/, reports/}. Holds
// an exclusive lock file for its lifetime.
class RunDirectory {
 public:
  RunDirectory(std::filesystem::path root, std::string command, KeyValueConfig config);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& relative) const { return root_ / relative; }
  // Registers a file this command wrote.
  void record(const std::string& name, const std::filesystem::path& file);
  void write_text(const std::string& relative, const std::string& text);
  // Writes manifest.json; earlier commands on the same run stay in "history".
  void finish();

 private:
  std::filesystem::path root_;
  std::string command_;
  KeyValueConfig config_;
  std::map<std::string, std::string> artifacts_;
  std::string started_;
  int lock_fd_ = -1;
};

std::string utc_timestamp();

// Stages ------------------------------------------------------------------------

struct RationalizeOutcome {
  std::map<std::string, RationalizeStats> stats;
  std::size_t backend_calls = 0;
};

// Writes rationales/<role>.jsonl for each role and keeps the shared cache
// in rationales/cache.jsonl.
RationalizeOutcome run_rationalize(const KeyValueConfig& config, RunDirectory& run,
                                   CompletionBackend& backend, const Datasets& data);

// Every rationales/<role>.jsonl of the run, merged by instance id.
RationaleMap load_run_rationales(const RunDirectory& run, const Datasets& data);

struct TrainOutcome {
  std::vector<std::uint64_t> seeds;
  std::vector<TrainLog> logs;
};

// One checkpoint (checkpoints/seed-<s>/) and one log
// (logs/train-seed-<s>.jsonl) per seed.
TrainOutcome run_train(const KeyValueConfig& config, RunDirectory& run, const Datasets& data);

std::vector<std::string> parse_suite(const std::string& text);

// Runs the suite over every seed's checkpoint and writes
// reports/eval.json plus per-seed prediction dumps.
EvalReport run_evaluate(const KeyValueConfig& config, RunDirectory& run, const Datasets& data,
                        CompletionBackend& backend, const std::vector<std::string>& suite);

// Mean entropy of the choice distribution with every rationale masked.
double masked_prediction_entropy(const ReasonerModel& model, const DatasetSplit& split,
                                 const RationaleMap& rationales);

// Cross-method NRG from eval.json reports (method name and mean accuracy
// and LAS) or from a "method,accuracy,las" CSV.
std::map<std::string, MethodMetrics> metrics_from_reports(
    const std::vector<std::filesystem::path>& reports);
std::map<std::string, MethodMetrics> metrics_from_csv(const std::filesystem::path& path);
std::string nrg_json(const std::map<std::string, MethodMetrics>& metrics,
                     const std::map<std::string, double>& scores);

// Synthetic corpus files ------------------------------------------------------

struct SynthOutcome {
  std::vector<std::filesystem::path> files;
};

// Writes train/test/sim/ood JSONL files, the synthetic prompt and a config
// that points at them. Reads the synth.* keys.
SynthOutcome write_synthetic_workspace(const KeyValueConfig& config,
                                       const std::filesystem::path& out);

}  // namespace rtr

#endif  // RTR_PIPELINE_H_
