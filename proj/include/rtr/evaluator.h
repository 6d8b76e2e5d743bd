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


#ifndef RTR_EVALUATOR_H_
#define RTR_EVALUATOR_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtr/dataset.h"
#include "rtr/rationalizer.h"
#include "rtr/reasoner.h"
#include "rtr/trainer.h"

namespace rtr {

using InstanceMap = std::unordered_map<std::string, QAInstance>;
InstanceMap index_instances(const DatasetSplit& split);

struct PredictionRecord {
  std::string id;
  std::size_t predicted_index = 0;
  std::size_t gold_index = 0;
  std::vector<std::string> rationale_texts;  // empty when scored without
  std::vector<double> probabilities;

  bool operator==(const PredictionRecord&) const = default;
};

// Scores every instance. With `rationales` null the rationale segment is
// omitted (rationale-blind models).
std::vector<PredictionRecord> predict(const ReasonerModel& model, const DatasetSplit& split,
                                      const RationaleMap* rationales);

// Throws EmptyPredictions.
double accuracy(std::span<const PredictionRecord> preds);

// JSONL of {"id","predicted_index","gold_index","rationale_texts","probabilities"}.
std::string prediction_record_json(const PredictionRecord& record);
PredictionRecord parse_prediction_record(std::string_view line);
void save_prediction_records(std::span<const PredictionRecord> preds,
                             const std::filesystem::path& path);
std::vector<PredictionRecord> load_prediction_records(const std::filesystem::path& path);
// JSONL of {"id","probabilities","predicted_index"}.
void save_predictions(std::span<const PredictionRecord> preds,
                      const std::filesystem::path& path);

// Simulator ----------------------------------------------------------------

struct SimulatorConfig {
  ToyReasonerConfig model;
  TrainConfig train;
  double dev_fraction = 0.1;

  SimulatorConfig();
};

// Predicts the reasoner's label from (question, choices, rationale of the
// predicted choice) or from (question, choices) alone. One model learns both
// conditions; the shown rationale is repeated for every choice encoding.
class Simulator {
 public:
  explicit Simulator(std::unique_ptr<ReasonerModel> model) : model_(std::move(model)) {}

  std::size_t predict(const QAInstance& instance,
                      const std::optional<std::string>& rationale) const;
  const ReasonerModel& model() const { return *model_; }

 private:
  std::unique_ptr<ReasonerModel> model_;
};

// The simulator's training copy of an instance has gold_index replaced by
// the reasoner's prediction. gold_index of the records is never read.
// Throws EmptyPredictions.
Simulator train_simulator(std::span<const PredictionRecord> preds_train,
                          const InstanceMap& instances,
                          std::shared_ptr<const Tokenizer> tokenizer, std::uint64_t seed,
                          const SimulatorConfig& config = {});

struct SimulationOutcome {
  bool with_rationale_correct = false;
  bool without_rationale_correct = false;
};

struct LasResult {
  // In [-1, 1]; reports multiply by 100.
  double las = 0.0;
  double leaking_delta = 0.0;
  double nonleaking_delta = 0.0;
  std::size_t n_leaking = 0;
  std::size_t n_nonleaking = 0;
};

// Leaking records are those the simulator gets right without the
// rationale. LAS is the unweighted mean of the per-group accuracy gains from
// showing the rationale; an empty group contributes 0 and logs a warning.
LasResult las_from_outcomes(std::span<const SimulationOutcome> outcomes);

std::vector<SimulationOutcome> simulate(const Simulator& simulator,
                                        std::span<const PredictionRecord> preds_eval,
                                        const InstanceMap& instances);

LasResult las(const Simulator& simulator, std::span<const PredictionRecord> preds_eval,
              const InstanceMap& instances);

// NRG ----------------------------------------------------------------------

struct MethodMetrics {
  double accuracy = 0.0;
  double las = 0.0;
};

// Mean of min-max normalized accuracy and LAS across methods. A metric on
// which every method ties contributes 0.5 and logs a warning. Needs at least
// two methods.
std::map<std::string, double> nrg(const std::map<std::string, MethodMetrics>& metrics);

// Stress test --------------------------------------------------------------

struct StressResult {
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
  // clean - perturbed, as a fraction; reports show it in points.
  double drop = 0.0;
  std::vector<PredictionRecord> perturbed;
};

// For each test instance, picks a different test question uniformly at
// random, regenerates rationales for (that question, original choices) and
// scores the original question with them. With `uses_rationales` false the
// model is scored without rationales in both conditions.
StressResult stress_test(const ReasonerModel& model, CompletionBackend& backend,
                         const PromptSpec& spec, const DatasetSplit& test,
                         const RationaleMap& clean_rationales, std::uint64_t seed,
                         bool uses_rationales, const GenerationOptions& options = {},
                         RationaleCache* cache = nullptr);

// The instance whose question replaced `test.instances[i]`'s in a stress
// run with this seed, one index per instance.
std::vector<std::size_t> stress_substitutions(std::size_t n, std::uint64_t seed);

// Oracle rationales ----------------------------------------------------------

// kReplaceAll: the annotated rationale stands in for every choice.
// kGoldOnly: it replaces the gold choice's rationale; the others keep their
// generated text.
enum class OracleRule { kReplaceAll, kGoldOnly };

// Throws MissingAnnotatedRationale; kGoldOnly also needs `generated`.
RationaleMap annotated_rationales(const DatasetSplit& split, OracleRule rule = OracleRule::kReplaceAll,
                                  const RationaleMap* generated = nullptr);

struct OracleResult {
  double oracle_accuracy = 0.0;
  double generated_accuracy = 0.0;
  double delta = 0.0;  // oracle - generated
};

OracleResult oracle_eval(const ReasonerModel& model, const DatasetSplit& test,
                         const RationaleMap& generated,
                         OracleRule rule = OracleRule::kReplaceAll);

// OOD ----------------------------------------------------------------------

struct OodResult {
  std::string source_dataset;
  std::string target_dataset;
  double accuracy = 0.0;
  std::vector<PredictionRecord> predictions;
};

// Generates target rationales with the target's prompt and scores them with
// no parameter update. Throws SameSourceTarget when the tags match.
OodResult ood_eval(const ReasonerModel& model, const std::string& source_dataset,
                   const DatasetSplit& target, CompletionBackend& backend,
                   const PromptSpec& spec, bool uses_rationales,
                   const GenerationOptions& options = {}, RationaleCache* cache = nullptr);

// Reports ------------------------------------------------------------------

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population; 0 for one value
  std::vector<double> values;
};
MetricSummary summarize(std::span<const double> values);

// One evaluation: seed-level values per metric plus their mean and std.
// Metric names: accuracy, las, nrg, sensitivity_drop and protocol-specific
// ones. Contains no timestamps, so reruns are byte-identical.
struct EvalReport {
  std::string method;
  std::size_t n = 0;
  std::string config_fingerprint;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, MetricSummary> metrics;
  std::map<std::string, std::string> notes;

  void add(const std::string& metric, std::span<const double> per_seed);
  std::string to_json() const;
};

// Settings that define how LAS and the oracle protocol were computed.
std::map<std::string, std::string> protocol_notes();

// "method,accuracy,las,nrg" rows; metrics are written in the units given.
std::string nrg_csv(const std::map<std::string, MethodMetrics>& metrics,
                    const std::map<std::string, double>& scores);

}  // namespace rtr

#endif  // RTR_EVALUATOR_H_
