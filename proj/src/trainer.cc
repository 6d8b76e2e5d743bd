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

#include "rtr/trainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "rtr/error.h"
#include "spdlog/spdlog.h"

namespace rtr {

std::string_view to_string(Strategy strategy) {
  return strategy == Strategy::kMask ? "mask" : "replace";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "mask") return Strategy::kMask;
  if (text == "replace") return Strategy::kReplace;
  throw UsageError("unknown perturbation strategy: " + std::string(text));
}

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kCounterfactual: return "counterfactual";
    case TrainMode::kStandard: return "standard";
    case TrainMode::kDropoutContext: return "dropout_context";
    case TrainMode::kNoRationale: return "no_rationale";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "counterfactual") return TrainMode::kCounterfactual;
  if (text == "standard") return TrainMode::kStandard;
  if (text == "dropout_context") return TrainMode::kDropoutContext;
  if (text == "no_rationale") return TrainMode::kNoRationale;
  throw UsageError("unknown training mode: " + std::string(text));
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd") return OptimizerKind::kSgd;
  throw UsageError("unknown optimizer: " + std::string(text));
}

void TrainConfig::validate() const {
  if (mode != TrainMode::kCounterfactual && !strategies.empty()) {
    throw UsageError("perturbation strategies only apply to counterfactual mode");
  }
  if (!strategies.empty() && !(epsilon > 0.0 && epsilon <= 1.0)) {
    throw UsageError("epsilon must lie in (0, 1]");
  }
  if (!(replace_rate >= 0.0 && replace_rate <= 1.0)) {
    throw UsageError("replace_rate must lie in [0, 1]");
  }
  if (!(dropout_context_rate >= 0.0 && dropout_context_rate <= 1.0)) {
    throw UsageError("dropout_context_rate must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("learning_rate must be positive");
  }
  if (batch_size == 0) throw UsageError("batch_size must be positive");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["epsilon"] = epsilon;
  j["replace_rate"] = replace_rate;
  auto& s = j["strategies"] = nlohmann::ordered_json::array();
  for (auto st : strategies) s.push_back(to_string(st));
  j["dropout_context_rate"] = dropout_context_rate;
  j["optimizer"] = to_string(optimizer);
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  return j.dump();
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig config;
  config.mode = parse_train_mode(kv.get_string("mode", "counterfactual"));
  config.epsilon = kv.get_double("epsilon", config.epsilon);
  config.replace_rate = kv.get_double("replace_rate", config.replace_rate);
  const std::vector<std::string> default_strategies =
      config.mode == TrainMode::kCounterfactual
          ? std::vector<std::string>{"mask", "replace"}
          : std::vector<std::string>{};
  config.strategies.clear();
  const bool automatic = kv.get_string("strategies", "auto") == "auto";
  for (const auto& s : automatic ? default_strategies : kv.get_list("strategies", {})) {
    const Strategy st = parse_strategy(s);
    if (std::find(config.strategies.begin(), config.strategies.end(), st) ==
        config.strategies.end()) {
      config.strategies.push_back(st);
    }
  }
  config.dropout_context_rate =
      kv.get_double("dropout_context_rate", config.dropout_context_rate);
  config.optimizer = parse_optimizer(kv.get_string("optimizer", "adam"));
  config.learning_rate = kv.get_double("learning_rate", config.learning_rate);
  config.batch_size = kv.get_uint("batch_size", config.batch_size);
  config.epochs = kv.get_uint("epochs", config.epochs);
  config.seed = kv.get_uint("seed", config.seed);
  config.validate();
  return config;
}

// Targets and losses -------------------------------------------------------

TargetDistribution one_hot_targets(std::size_t gold_index, std::size_t n_choices) {
  if (gold_index >= n_choices) throw std::invalid_argument("gold index out of range");
  TargetDistribution t;
  t.values.assign(n_choices, 0.0);
  t.values[gold_index] = 1.0;
  return t;
}

TargetDistribution smooth_targets(std::size_t gold_index, std::size_t n_choices,
                                  double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  }
  TargetDistribution t = one_hot_targets(gold_index, n_choices);
  const double share = epsilon / static_cast<double>(n_choices);
  for (double& v : t.values) v = (1.0 - epsilon) * v + share;
  t.smoothed = true;
  return t;
}

namespace {

double safe_log(double p) { return p > 1e-300 ? std::log(p) : std::log(1e-300); }

double cross_entropy(std::span<const double> probabilities, std::span<const double> targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0.0) loss -= targets[i] * safe_log(probabilities[i]);
  }
  return loss;
}

}  // namespace

double standard_loss(std::span<const double> probabilities, std::size_t gold_index) {
  if (gold_index >= probabilities.size()) {
    throw std::invalid_argument("gold index out of range");
  }
  return -safe_log(probabilities[gold_index]);
}

double counterfactual_loss(std::span<const double> probabilities_perturbed,
                           const TargetDistribution& targets) {
  if (!targets.smoothed) {
    throw std::invalid_argument("counterfactual loss needs smoothed targets");
  }
  if (targets.values.size() != probabilities_perturbed.size()) {
    throw std::invalid_argument("target and probability sizes differ");
  }
  return cross_entropy(probabilities_perturbed, targets.values);
}

// Perturbations ------------------------------------------------------------

EncodedInput perturb_mask(const EncodedInput& enc) {
  if (enc.rationale_span.empty()) throw std::invalid_argument("empty rationale span");
  EncodedInput out = enc;
  for (std::size_t t = enc.rationale_span.start; t < enc.rationale_span.end; ++t) {
    out.attention_mask[t] = 0;
  }
  return out;
}

EncodedInput perturb_replace(const EncodedInput& enc, double k, std::size_t vocab_size,
                             Rng& rng) {
  if (enc.rationale_span.empty()) throw std::invalid_argument("empty rationale span");
  if (!(k >= 0.0 && k <= 1.0)) throw std::invalid_argument("k must lie in [0, 1]");
  if (vocab_size <= static_cast<std::size_t>(SpecialTokens::kCount)) {
    throw std::invalid_argument("vocabulary has no ordinary tokens");
  }
  EncodedInput out = enc;
  const std::size_t length = enc.rationale_span.size();
  const auto count = static_cast<std::size_t>(std::llround(k * static_cast<double>(length)));
  const std::size_t ordinary = vocab_size - SpecialTokens::kCount;
  for (std::size_t offset : rng.sample_without_replacement(length, count)) {
    out.token_ids[enc.rationale_span.start + offset] =
        static_cast<TokenId>(SpecialTokens::kCount + rng.uniform_index(ordinary));
  }
  return out;
}

EncodedInput mask_question(const EncodedInput& enc) {
  EncodedInput out = enc;
  for (std::size_t t = enc.question_span.start; t < enc.question_span.end; ++t) {
    out.attention_mask[t] = 0;
  }
  return out;
}

Strategy select_strategy(std::span<const Strategy> strategies, Rng& rng) {
  if (strategies.empty()) throw std::invalid_argument("no strategies enabled");
  return strategies[rng.uniform_index(strategies.size())];
}

// Loss plumbing ------------------------------------------------------------

namespace {

ChoiceLoss evaluate_choices(const ReasonerModel& model,
                            std::span<const EncodedInput> encodings,
                            const TargetDistribution& targets,
                            std::vector<std::vector<double>>* token_probs) {
  if (targets.values.size() != encodings.size()) {
    throw std::invalid_argument("target size does not match choice count");
  }
  std::vector<double> rho;
  rho.reserve(encodings.size());
  for (const auto& enc : encodings) {
    auto probs = model.forced_token_probabilities(enc);
    rho.push_back(plausibility_from_probabilities(probs));
    if (token_probs) token_probs->push_back(std::move(probs));
  }
  ChoiceLoss out;
  out.probabilities = softmax(rho);
  out.loss = cross_entropy(out.probabilities, targets.values);
  return out;
}

}  // namespace

ChoiceLoss choice_loss(const ReasonerModel& model, std::span<const EncodedInput> encodings,
                       const TargetDistribution& targets) {
  return evaluate_choices(model, encodings, targets, nullptr);
}

ChoiceLoss choice_loss_and_gradient(ReasonerModel& model,
                                    std::span<const EncodedInput> encodings,
                                    const TargetDistribution& targets, double scale) {
  std::vector<std::vector<double>> token_probs;
  ChoiceLoss out = evaluate_choices(model, encodings, targets, &token_probs);
  // Targets sum to one, so d(loss)/d(rho_i) = P_i - Q_i.
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    const double drho = scale * (out.probabilities[i] - targets.values[i]);
    if (drho == 0.0) continue;
    auto upstream = plausibility_weights(token_probs[i]);
    for (double& u : upstream) u *= drho;
    model.accumulate_gradient(encodings[i], upstream);
  }
  return out;
}

// Optimizers ---------------------------------------------------------------

void SgdOptimizer::step(std::span<double> params, std::span<const double> grads) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grads[i];
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads) {
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config) {
  if (config.optimizer == OptimizerKind::kSgd) {
    return std::make_unique<SgdOptimizer>(config.learning_rate);
  }
  return std::make_unique<AdamOptimizer>(config.learning_rate);
}

// Training -----------------------------------------------------------------

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_acc"] = e.dev_acc;
    j["strategy_counts"] = {{"mask", e.mask_count}, {"replace", e.replace_count}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<EncodedInput> encode_instance(const QAInstance& instance,
                                          const RationaleSet* rationales,
                                          const ReasonerModel& model) {
  if (rationales && rationales->rationales.size() != instance.choices.size()) {
    throw DataError("rationale count does not match choices for " + instance.id);
  }
  std::vector<EncodedInput> out;
  out.reserve(instance.choices.size());
  for (std::size_t i = 0; i < instance.choices.size(); ++i) {
    std::optional<std::string> r;
    if (rationales) r = rationales->rationales[i];
    out.push_back(encode(instance, r, i, model));
  }
  return out;
}

RationaleMap index_rationales(const std::vector<RationaleSet>& sets) {
  RationaleMap map;
  for (const auto& s : sets) map[s.instance_id] = s;
  return map;
}

namespace {

const RationaleSet* lookup(const QAInstance& instance, const RationaleMap& rationales,
                           const TrainConfig& config) {
  if (config.mode == TrainMode::kNoRationale) return nullptr;
  const auto it = rationales.find(instance.id);
  if (it == rationales.end()) {
    if (config.allow_missing_rationales) return nullptr;
    throw MissingRationales(instance.id);
  }
  return &it->second;
}

double dev_accuracy(const ReasonerModel& model, const DatasetSplit& dev,
                    const RationaleMap& rationales, const TrainConfig& config) {
  std::size_t correct = 0;
  for (const auto& instance : dev.instances) {
    const auto scores = score_choices(model, instance, lookup(instance, rationales, config));
    if (scores.predicted_index == static_cast<std::size_t>(instance.gold_index)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dev.size());
}

}  // namespace

TrainResult train(const ReasonerModel& model, const DatasetSplit& train_split,
                  const DatasetSplit& dev_split, const RationaleMap& rationales,
                  const TrainConfig& config) {
  config.validate();
  if (train_split.empty()) throw EmptySplit("train split is empty");
  if (dev_split.empty()) throw EmptySplit("dev split is empty");
  // Fail before spending any compute.
  for (const auto* split : {&train_split, &dev_split}) {
    for (const auto& instance : split->instances) lookup(instance, rationales, config);
  }

  TrainResult result;
  result.model = model.clone();
  if (config.epochs == 0) return result;

  spdlog::info("training mode={} optimizer={} lr={} batch={} epochs={} seed={}",
               to_string(config.mode), to_string(config.optimizer), config.learning_rate,
               config.batch_size, config.epochs, config.seed);

  ReasonerModel& current = *result.model;
  std::unique_ptr<ReasonerModel> best;
  auto optimizer = make_optimizer(config);
  Rng rng(config.seed);
  const bool counterfactual =
      config.mode == TrainMode::kCounterfactual && !config.strategies.empty();

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      current.zero_gradients();

      Strategy strategy = Strategy::kMask;
      if (counterfactual) {
        strategy = select_strategy(config.strategies, rng);
        (strategy == Strategy::kMask ? log.mask_count : log.replace_count) += 1;
      }

      double batch_loss = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const QAInstance& instance = train_split.instances[order[b]];
        const auto* sets = lookup(instance, rationales, config);
        auto encodings = encode_instance(instance, sets, current);
        if (config.mode == TrainMode::kDropoutContext &&
            rng.bernoulli(config.dropout_context_rate)) {
          for (auto& enc : encodings) enc = mask_question(enc);
        }
        const auto gold = static_cast<std::size_t>(instance.gold_index);
        const std::size_t n = instance.choices.size();
        double loss = choice_loss_and_gradient(current, encodings,
                                               one_hot_targets(gold, n), scale).loss;

        if (counterfactual && sets) {
          for (auto& enc : encodings) {
            enc = strategy == Strategy::kMask
                      ? perturb_mask(enc)
                      : perturb_replace(enc, config.replace_rate, current.vocab_size(), rng);
          }
          loss += choice_loss_and_gradient(current, encodings,
                                           smooth_targets(gold, n, config.epsilon), scale)
                      .loss;
        }
        if (!std::isfinite(loss)) {
          throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", instance " +
                              instance.id);
        }
        batch_loss += loss;
      }

      for (double g : current.gradients()) {
        if (!std::isfinite(g)) {
          throw NonFiniteLoss("non-finite gradient in epoch " + std::to_string(epoch));
        }
      }
      optimizer->step(current.parameters(), current.gradients());
      log.batch_losses.push_back(batch_loss * scale);
      epoch_loss += batch_loss;
    }

    log.train_loss = epoch_loss / static_cast<double>(order.size());
    log.dev_acc = dev_accuracy(current, dev_split, rationales, config);
    spdlog::debug("epoch {} loss {:.4f} dev_acc {:.4f}", epoch, log.train_loss, log.dev_acc);
    if (!best || log.dev_acc >= result.log.best_dev_acc) {
      best = current.clone();
      result.log.best_epoch = epoch;
      result.log.best_dev_acc = log.dev_acc;
    }
    result.log.epochs.push_back(std::move(log));
  }
  current.zero_gradients();
  best->zero_gradients();
  result.model = std::move(best);
  return result;
}

}  // namespace rtr
