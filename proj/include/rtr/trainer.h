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


#ifndef RTR_TRAINER_H_
#define RTR_TRAINER_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rtr/config.h"
#include "rtr/dataset.h"
#include "rtr/random.h"
#include "rtr/rationalizer.h"
#include "rtr/reasoner.h"

namespace rtr {

using RationaleMap = std::unordered_map<std::string, RationaleSet>;

enum class Strategy { kMask, kReplace };
std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view text);

// kCounterfactual: clean cross-entropy plus the smoothed loss on perturbed
// rationales. The other three are the baselines.
enum class TrainMode { kCounterfactual, kStandard, kDropoutContext, kNoRationale };
std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

enum class OptimizerKind { kAdam, kSgd };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  TrainMode mode = TrainMode::kCounterfactual;
  double epsilon = 0.1;
  double replace_rate = 0.30;
  std::vector<Strategy> strategies = {Strategy::kMask, Strategy::kReplace};
  double dropout_context_rate = 0.5;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 0.01;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  // Instances without a RationaleSet are encoded without a rationale
  // instead of raising MissingRationales. Used by the simulator.
  bool allow_missing_rationales = false;

  // Throws UsageError. epsilon may equal 1 so the full smoothing sweep can
  // run; strategies must be empty outside counterfactual mode.
  void validate() const;
  std::string to_json() const;
};

// Reads mode, epsilon, replace_rate, strategies, dropout_context_rate,
// optimizer, learning_rate, batch_size, epochs, seed. When `strategies` is
// absent or "auto" it becomes mask,replace in counterfactual mode and none
// otherwise.
TrainConfig train_config_from(const KeyValueConfig& config);

struct TargetDistribution {
  std::vector<double> values;
  bool smoothed = false;
};

TargetDistribution one_hot_targets(std::size_t gold_index, std::size_t n_choices);
// (1 - eps) at gold plus eps / n everywhere.
TargetDistribution smooth_targets(std::size_t gold_index, std::size_t n_choices,
                                  double epsilon);

// -log p[gold]
double standard_loss(std::span<const double> probabilities, std::size_t gold_index);
// -sum_i Q'(i) log P'(i). Requires smoothed targets.
double counterfactual_loss(std::span<const double> probabilities_perturbed,
                           const TargetDistribution& targets);

// Zeroes the attention mask over the rationale span.
EncodedInput perturb_mask(const EncodedInput& enc);
// Resamples exactly round(k * span) distinct rationale positions uniformly
// over the non-special vocabulary.
EncodedInput perturb_replace(const EncodedInput& enc, double k, std::size_t vocab_size,
                             Rng& rng);
// Masks the question span; used by the dropout_context baseline.
EncodedInput mask_question(const EncodedInput& enc);

Strategy select_strategy(std::span<const Strategy> strategies, Rng& rng);

// Cross-entropy of softmax(rho) against targets over one instance's choice
// encodings. Adds scale * gradient into the model and returns the loss and
// the choice probabilities.
struct ChoiceLoss {
  double loss = 0.0;
  std::vector<double> probabilities;
};
ChoiceLoss choice_loss_and_gradient(ReasonerModel& model,
                                    std::span<const EncodedInput> encodings,
                                    const TargetDistribution& targets, double scale);
// Same loss without touching gradients.
ChoiceLoss choice_loss(const ReasonerModel& model, std::span<const EncodedInput> encodings,
                       const TargetDistribution& targets);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> params, std::span<const double> grads) = 0;
};

class SgdOptimizer : public Optimizer {
 public:
  explicit SgdOptimizer(double learning_rate) : lr_(learning_rate) {}
  void step(std::span<double> params, std::span<const double> grads) override;

 private:
  double lr_;
};

class AdamOptimizer : public Optimizer {
 public:
  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<double> params, std::span<const double> grads) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_acc = 0.0;
  std::size_t mask_count = 0;
  std::size_t replace_count = 0;
  // Per-batch total losses, for step-level comparisons.
  std::vector<double> batch_losses;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  // 0 when no epoch ran.
  std::size_t best_epoch = 0;
  double best_dev_acc = 0.0;

  // One {"epoch","train_loss","dev_acc","strategy_counts"} line per epoch.
  std::string to_jsonl() const;
};

struct TrainResult {
  std::unique_ptr<ReasonerModel> model;
  TrainLog log;
};

// Builds the encodings an instance is trained and scored on under `mode`:
// no_rationale drops the rationale segment, every other mode uses r_i.
std::vector<EncodedInput> encode_instance(const QAInstance& instance,
                                          const RationaleSet* rationales,
                                          const ReasonerModel& model);

// Trains a copy of `model`. Rationales for dev instances are looked up in
// the same map. Returns the parameters of the epoch with the best dev
// accuracy (latest on ties).
TrainResult train(const ReasonerModel& model, const DatasetSplit& train_split,
                  const DatasetSplit& dev_split, const RationaleMap& rationales,
                  const TrainConfig& config);

RationaleMap index_rationales(const std::vector<RationaleSet>& sets);

}  // namespace rtr

#endif  // RTR_TRAINER_H_
