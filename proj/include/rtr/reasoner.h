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

#ifndef RTR_REASONER_H_
#define RTR_REASONER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtr/dataset.h"
#include "rtr/rationalizer.h"
#include "rtr/tokenizer.h"

namespace rtr {

// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool empty() const { return end <= start; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
  bool operator==(const Span&) const = default;
};

// Reasoner input for one (instance, choice) pair:
//   q <sep> a_1 <sep> ... <sep> a_n <rationale> r_i
// The rationale segment is omitted entirely when encoding without one.
struct EncodedInput {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> attention_mask;
  Span rationale_span;
  Span question_span;
  std::vector<TokenId> answer_token_ids;
  bool rationale_truncated = false;

  bool operator==(const EncodedInput&) const = default;
};

// Contract for the trainable reasoning model. Parameters live in one flat
// buffer so optimizers and gradient checks can treat every model alike.
class ReasonerModel {
 public:
  virtual ~ReasonerModel() = default;

  virtual const Tokenizer& tokenizer() const = 0;
  virtual std::size_t max_len() const = 0;
  std::size_t vocab_size() const { return tokenizer().vocab_size(); }

  // One distribution over the vocabulary per forced answer position.
  virtual std::vector<std::vector<double>> output_distributions(
      const EncodedInput& input) const = 0;
  // Probability of each forced answer token; same values as reading
  // output_distributions() at the forced ids.
  virtual std::vector<double> forced_token_probabilities(
      const EncodedInput& input) const = 0;
  // Adds d(sum_j upstream[j] * log P(t_j)) / d(params) into gradients().
  virtual void accumulate_gradient(const EncodedInput& input,
                                   std::span<const double> upstream) = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual std::span<double> gradients() = 0;
  void zero_gradients();

  virtual std::unique_ptr<ReasonerModel> clone() const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
};

struct ToyReasonerConfig {
  std::size_t hidden = 16;
  std::size_t max_len = 96;
  // Positions within a segment beyond this share one embedding.
  std::size_t max_segment_position = 16;
  double init_scale = 0.3;
  std::uint64_t seed = 1;
};

// Small encoder-decoder with a pointer-sentinel output layer. Encoder
// states mix token, segment and in-segment position embeddings through one
// tanh layer. A masked attention summary of the input conditions the decoder
// state; the decoder either copies an attended input token or falls back to
// a softmax over the vocabulary, and the copy/generate split is itself part
// of the attention softmax. Masked positions are skipped outright, so a fully
// masked span cannot influence any output.
class ToyReasoner : public ReasonerModel {
 public:
  ToyReasoner(std::shared_ptr<const Tokenizer> tokenizer, ToyReasonerConfig config);

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  std::size_t max_len() const override { return config_.max_len; }
  const ToyReasonerConfig& config() const { return config_; }

  std::vector<std::vector<double>> output_distributions(
      const EncodedInput& input) const override;
  std::vector<double> forced_token_probabilities(
      const EncodedInput& input) const override;
  void accumulate_gradient(const EncodedInput& input,
                           std::span<const double> upstream) override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> gradients() override { return grads_; }

  std::unique_ptr<ReasonerModel> clone() const override;
  // Writes model.bin, manifest.json and vocab.txt into dir.
  void save(const std::filesystem::path& dir) const override;
  static std::unique_ptr<ToyReasoner> load(const std::filesystem::path& dir);

 private:
  struct Layout;
  struct Trace;

  void forward(const EncodedInput& input, Trace& trace, bool keep_distribution) const;

  std::shared_ptr<const Tokenizer> tokenizer_;
  ToyReasonerConfig config_;
  std::shared_ptr<const Layout> layout_;
  std::vector<double> params_;
  std::vector<double> grads_;
};

// {"vocab_size", "max_len", "tokenizer_id", "seed", ...}
std::string checkpoint_manifest_json(const ToyReasoner& model);

// Encoding -----------------------------------------------------------------

// Omit the rationale by passing nullopt. Throws SequenceTooLong when even
// an empty rationale does not fit; a long rationale is cut from the right
// and flagged.
EncodedInput encode(const QAInstance& instance,
                    const std::optional<std::string>& rationale,
                    std::size_t choice_index, const ReasonerModel& model);

// Scoring ------------------------------------------------------------------

inline constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)

// Mean log-probability of the teacher-forced answer tokens, each floored at
// log(1e-12).
double plausibility(const ReasonerModel& model, const EncodedInput& input);
double plausibility_from_probabilities(std::span<const double> probs);
// d(rho)/d(log P(t_j)) for each forced position: 1/L, or 0 when floored.
std::vector<double> plausibility_weights(std::span<const double> probs);

struct ChoiceScores {
  std::vector<double> rho;
  std::vector<double> probabilities;
  std::size_t predicted_index = 0;
};

// Max-subtracted softmax; argmax ties go to the lowest index.
ChoiceScores scores_from_rho(std::vector<double> rho);
std::vector<double> softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> values);

// Pass nullptr to score without rationales.
ChoiceScores score_choices(const ReasonerModel& model, const QAInstance& instance,
                           const RationaleSet* rationales);

// {"id", "probabilities", "predicted_index"}
std::string prediction_json(const std::string& id, const ChoiceScores& scores);

}  // namespace rtr

#endif  // RTR_REASONER_H_
