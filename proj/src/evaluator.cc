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

#include "rtr/evaluator.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fmt/format.h"
#include "json.hpp"
#include "rtr/error.h"
#include "spdlog/spdlog.h"

namespace rtr {

using ordered_json = nlohmann::ordered_json;

InstanceMap index_instances(const DatasetSplit& split) {
  InstanceMap map;
  for (const auto& instance : split.instances) map.emplace(instance.id, instance);
  return map;
}

std::vector<PredictionRecord> predict(const ReasonerModel& model, const DatasetSplit& split,
                                      const RationaleMap* rationales) {
  std::vector<PredictionRecord> out;
  out.reserve(split.size());
  for (const auto& instance : split.instances) {
    const RationaleSet* set = nullptr;
    if (rationales) {
      const auto it = rationales->find(instance.id);
      if (it == rationales->end()) throw MissingRationales(instance.id);
      set = &it->second;
    }
    const ChoiceScores scores = score_choices(model, instance, set);
    PredictionRecord record;
    record.id = instance.id;
    record.predicted_index = scores.predicted_index;
    record.gold_index = static_cast<std::size_t>(instance.gold_index);
    if (set) record.rationale_texts = set->rationales;
    record.probabilities = scores.probabilities;
    out.push_back(std::move(record));
  }
  return out;
}

double accuracy(std::span<const PredictionRecord> preds) {
  if (preds.empty()) throw EmptyPredictions();
  std::size_t correct = 0;
  for (const auto& p : preds) correct += p.predicted_index == p.gold_index ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::string prediction_record_json(const PredictionRecord& record) {
  ordered_json j;
  j["id"] = record.id;
  j["predicted_index"] = record.predicted_index;
  j["gold_index"] = record.gold_index;
  j["rationale_texts"] = record.rationale_texts;
  j["probabilities"] = record.probabilities;
  return j.dump();
}

PredictionRecord parse_prediction_record(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    PredictionRecord r;
    r.id = j.at("id").get<std::string>();
    r.predicted_index = j.at("predicted_index").get<std::size_t>();
    r.gold_index = j.at("gold_index").get<std::size_t>();
    r.rationale_texts = j.at("rationale_texts").get<std::vector<std::string>>();
    r.probabilities = j.at("probabilities").get<std::vector<double>>();
    if (r.predicted_index >= r.probabilities.size() ||
        r.gold_index >= r.probabilities.size()) {
      throw DataError("prediction record index out of range: " + r.id);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad prediction record: " + std::string(e.what()));
  }
}

namespace {

void write_lines(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

void save_prediction_records(std::span<const PredictionRecord> preds,
                             const std::filesystem::path& path) {
  std::string text;
  for (const auto& p : preds) text += prediction_record_json(p) + "\n";
  write_lines(path, text);
}

std::vector<PredictionRecord> load_prediction_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_prediction_record(line));
  }
  return out;
}

void save_predictions(std::span<const PredictionRecord> preds,
                      const std::filesystem::path& path) {
  std::string text;
  for (const auto& p : preds) {
    ChoiceScores scores;
    scores.probabilities = p.probabilities;
    scores.predicted_index = p.predicted_index;
    text += prediction_json(p.id, scores) + "\n";
  }
  write_lines(path, text);
}

// Simulator ----------------------------------------------------------------

SimulatorConfig::SimulatorConfig() {
  train.mode = TrainMode::kStandard;
  train.strategies.clear();
  train.allow_missing_rationales = true;
  train.epochs = 10;
}

std::size_t Simulator::predict(const QAInstance& instance,
                               const std::optional<std::string>& rationale) const {
  if (!rationale) return score_choices(*model_, instance, nullptr).predicted_index;
  RationaleSet set;
  set.instance_id = instance.id;
  set.rationales.assign(instance.choices.size(), *rationale);
  return score_choices(*model_, instance, &set).predicted_index;
}

namespace {

const QAInstance& find_instance(const InstanceMap& instances, const std::string& id) {
  const auto it = instances.find(id);
  if (it == instances.end()) throw DataError("prediction for unknown instance " + id);
  return it->second;
}

std::optional<std::string> shown_rationale(const PredictionRecord& record) {
  if (record.rationale_texts.empty()) return std::nullopt;
  if (record.predicted_index >= record.rationale_texts.size()) {
    throw DataError("predicted index has no rationale in record " + record.id);
  }
  return record.rationale_texts[record.predicted_index];
}

// Adds the two simulator views of one record.
void add_views(const PredictionRecord& record, const InstanceMap& instances,
               DatasetSplit& split, RationaleMap& rationales) {
  QAInstance base = find_instance(instances, record.id);
  if (record.predicted_index >= base.choices.size()) {
    throw DataError("predicted index out of range in record " + record.id);
  }
  base.gold_index = static_cast<int>(record.predicted_index);
  base.annotated_rationale.reset();

  QAInstance without = base;
  without.id = record.id + "#without";
  split.instances.push_back(std::move(without));

  if (const auto shown = shown_rationale(record)) {
    QAInstance with = base;
    with.id = record.id + "#with";
    RationaleSet set;
    set.instance_id = with.id;
    set.rationales.assign(with.choices.size(), *shown);
    rationales[with.id] = std::move(set);
    split.instances.push_back(std::move(with));
  }
}

}  // namespace

Simulator train_simulator(std::span<const PredictionRecord> preds_train,
                          const InstanceMap& instances,
                          std::shared_ptr<const Tokenizer> tokenizer, std::uint64_t seed,
                          const SimulatorConfig& config) {
  if (preds_train.empty()) throw EmptyPredictions();
  std::vector<std::size_t> order(preds_train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  // Small dumps use every record for both fitting and selection.
  std::size_t n_dev = 0;
  if (preds_train.size() >= 10) {
    n_dev = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.dev_fraction *
                                                 static_cast<double>(preds_train.size()))));
  }
  DatasetSplit fit, dev;
  fit.name = SplitName::kTrain;
  dev.name = SplitName::kDev;
  RationaleMap rationales;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& record = preds_train[order[k]];
    if (k < n_dev) {
      add_views(record, instances, dev, rationales);
    } else {
      add_views(record, instances, fit, rationales);
    }
  }
  if (n_dev == 0) dev = fit;

  ToyReasonerConfig model_config = config.model;
  model_config.seed = seed;
  TrainConfig train_config = config.train;
  train_config.seed = seed;
  ToyReasoner model(std::move(tokenizer), model_config);
  auto result = train(model, fit, dev, rationales, train_config);
  return Simulator(std::move(result.model));
}

LasResult las_from_outcomes(std::span<const SimulationOutcome> outcomes) {
  if (outcomes.empty()) throw EmptyPredictions();
  std::size_t n[2] = {0, 0}, with[2] = {0, 0}, without[2] = {0, 0};
  for (const auto& o : outcomes) {
    const int g = o.without_rationale_correct ? 0 : 1;  // 0 leaking, 1 not
    ++n[g];
    with[g] += o.with_rationale_correct ? 1 : 0;
    without[g] += o.without_rationale_correct ? 1 : 0;
  }
  double delta[2] = {0.0, 0.0};
  for (int g = 0; g < 2; ++g) {
    if (n[g] == 0) {
      spdlog::warn("LAS: {} group is empty and contributes 0",
                   g == 0 ? "leaking" : "non-leaking");
      continue;
    }
    delta[g] = (static_cast<double>(with[g]) - static_cast<double>(without[g])) /
               static_cast<double>(n[g]);
  }
  LasResult r;
  r.leaking_delta = delta[0];
  r.nonleaking_delta = delta[1];
  r.n_leaking = n[0];
  r.n_nonleaking = n[1];
  r.las = (delta[0] + delta[1]) / 2.0;
  return r;
}

std::vector<SimulationOutcome> simulate(const Simulator& simulator,
                                        std::span<const PredictionRecord> preds_eval,
                                        const InstanceMap& instances) {
  std::vector<SimulationOutcome> out;
  out.reserve(preds_eval.size());
  for (const auto& record : preds_eval) {
    const QAInstance& instance = find_instance(instances, record.id);
    SimulationOutcome o;
    o.with_rationale_correct =
        simulator.predict(instance, shown_rationale(record)) == record.predicted_index;
    o.without_rationale_correct =
        simulator.predict(instance, std::nullopt) == record.predicted_index;
    out.push_back(o);
  }
  return out;
}

LasResult las(const Simulator& simulator, std::span<const PredictionRecord> preds_eval,
              const InstanceMap& instances) {
  const auto outcomes = simulate(simulator, preds_eval, instances);
  return las_from_outcomes(outcomes);
}

// NRG ----------------------------------------------------------------------

std::map<std::string, double> nrg(const std::map<std::string, MethodMetrics>& metrics) {
  if (metrics.size() < 2) throw UsageError("NRG needs at least two methods");
  auto normalizer = [&](double MethodMetrics::*field, const char* name) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& [method, m] : metrics) {
      if (!std::isfinite(m.*field)) throw DataError("non-finite " + std::string(name) +
                                                    " for method " + method);
      lo = std::min(lo, m.*field);
      hi = std::max(hi, m.*field);
    }
    if (hi == lo) spdlog::warn("NRG: every method ties on {}; it contributes 0.5", name);
    return [lo, hi, field](const MethodMetrics& m) {
      return hi == lo ? 0.5 : (m.*field - lo) / (hi - lo);
    };
  };
  const auto acc = normalizer(&MethodMetrics::accuracy, "accuracy");
  const auto las_norm = normalizer(&MethodMetrics::las, "LAS");
  std::map<std::string, double> out;
  for (const auto& [method, m] : metrics) out[method] = (acc(m) + las_norm(m)) / 2.0;
  return out;
}

// Stress test --------------------------------------------------------------

std::vector<std::size_t> stress_substitutions(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw DataError("stress test needs at least two test instances");
  Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (i + 1 + rng.uniform_index(n - 1)) % n;
  return out;
}

StressResult stress_test(const ReasonerModel& model, CompletionBackend& backend,
                         const PromptSpec& spec, const DatasetSplit& test,
                         const RationaleMap& clean_rationales, std::uint64_t seed,
                         bool uses_rationales, const GenerationOptions& options,
                         RationaleCache* cache) {
  StressResult result;
  const auto clean = predict(model, test, uses_rationales ? &clean_rationales : nullptr);
  result.clean_accuracy = accuracy(clean);

  RationaleMap perturbed_map;
  if (uses_rationales) {
    const auto subs = stress_substitutions(test.size(), seed);
    DatasetSplit substituted;
    substituted.name = test.name;
    substituted.source_dataset = test.source_dataset;
    for (std::size_t i = 0; i < test.size(); ++i) {
      QAInstance instance = test.instances[i];
      instance.id += "~stress";
      instance.question = test.instances[subs[i]].question;
      substituted.instances.push_back(std::move(instance));
    }
    auto sets = rationalize_split(backend, spec, substituted, options, cache);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      sets[i].instance_id = test.instances[i].id;
      sets[i].perturbed = true;
      perturbed_map[sets[i].instance_id] = std::move(sets[i]);
    }
  }
  result.perturbed = predict(model, test, uses_rationales ? &perturbed_map : nullptr);
  result.perturbed_accuracy = accuracy(result.perturbed);
  result.drop = result.clean_accuracy - result.perturbed_accuracy;
  return result;
}

// Oracle rationales ----------------------------------------------------------

RationaleMap annotated_rationales(const DatasetSplit& split, OracleRule rule,
                                  const RationaleMap* generated) {
  RationaleMap out;
  for (const auto& instance : split.instances) {
    if (!instance.annotated_rationale || instance.annotated_rationale->empty()) {
      throw MissingAnnotatedRationale(instance.id);
    }
    RationaleSet set;
    set.instance_id = instance.id;
    if (rule == OracleRule::kReplaceAll) {
      set.rationales.assign(instance.choices.size(), *instance.annotated_rationale);
      set.generator_tag = "annotated";
    } else {
      if (!generated) throw std::invalid_argument("gold-only oracle needs generated rationales");
      const auto it = generated->find(instance.id);
      if (it == generated->end()) throw MissingRationales(instance.id);
      set = it->second;
      set.rationales.at(static_cast<std::size_t>(instance.gold_index)) =
          *instance.annotated_rationale;
      set.generator_tag = "annotated-gold+" + set.generator_tag;
    }
    out[instance.id] = std::move(set);
  }
  return out;
}

OracleResult oracle_eval(const ReasonerModel& model, const DatasetSplit& test,
                         const RationaleMap& generated, OracleRule rule) {
  const RationaleMap oracle = annotated_rationales(test, rule, &generated);
  OracleResult r;
  r.oracle_accuracy = accuracy(predict(model, test, &oracle));
  r.generated_accuracy = accuracy(predict(model, test, &generated));
  r.delta = r.oracle_accuracy - r.generated_accuracy;
  return r;
}

// OOD ----------------------------------------------------------------------

OodResult ood_eval(const ReasonerModel& model, const std::string& source_dataset,
                   const DatasetSplit& target, CompletionBackend& backend,
                   const PromptSpec& spec, bool uses_rationales,
                   const GenerationOptions& options, RationaleCache* cache) {
  if (source_dataset == target.source_dataset) throw SameSourceTarget(source_dataset);
  OodResult r;
  r.source_dataset = source_dataset;
  r.target_dataset = target.source_dataset;
  if (uses_rationales) {
    const auto map = index_rationales(rationalize_split(backend, spec, target, options, cache));
    r.predictions = predict(model, target, &map);
  } else {
    r.predictions = predict(model, target, nullptr);
  }
  r.accuracy = accuracy(r.predictions);
  return r;
}

// Reports ------------------------------------------------------------------

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.values.assign(values.begin(), values.end());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

void EvalReport::add(const std::string& metric, std::span<const double> per_seed) {
  metrics[metric] = summarize(per_seed);
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["method"] = method;
  j["n"] = n;
  j["config_fingerprint"] = config_fingerprint;
  j["seeds"] = seeds;
  auto& m = j["metrics"] = ordered_json::object();
  for (const auto& [name, s] : metrics) {
    m[name] = {{"mean", s.mean}, {"std", s.stddev}, {"values", s.values}};
  }
  auto& notes_json = j["notes"] = ordered_json::object();
  for (const auto& [k, v] : notes) notes_json[k] = v;
  return j.dump(2) + "\n";
}

std::map<std::string, std::string> protocol_notes() {
  return {
      {"las_grouping", "simulator_without_rationale_correct"},
      {"las_aggregation", "unweighted_mean_of_group_deltas"},
      {"las_rationale_shown", "rationale_of_predicted_choice"},
      {"simulator_target", "reasoner_predicted_index"},
      {"oracle_rule", "annotated_rationale_replaces_every_choice"},
      {"oracle_alternative", "gold_choice_only_reported_as_oracle.gold_only"},
  };
}

std::string nrg_csv(const std::map<std::string, MethodMetrics>& metrics,
                    const std::map<std::string, double>& scores) {
  std::string out = "method,accuracy,las,nrg\n";
  for (const auto& [method, m] : metrics) {
    const auto it = scores.find(method);
    out += method + "," + fmt::format("{:.4f},{:.4f},{:.4f}", m.accuracy, m.las,
                                      it == scores.end() ? 0.0 : it->second) +
           "\n";
  }
  return out;
}

}  // namespace rtr
