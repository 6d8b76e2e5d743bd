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

#ifndef RTR_DATASET_H_
#define RTR_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rtr {

// One multi-choice question. gold_index indexes into choices.
struct QAInstance {
  std::string id;
  std::string question;
  std::vector<std::string> choices;
  int gold_index = 0;
  std::optional<std::string> annotated_rationale;

  bool operator==(const QAInstance&) const = default;
};

enum class SplitName { kTrain, kDev, kTest };

std::string_view to_string(SplitName name);
SplitName parse_split_name(std::string_view text);

struct DatasetSplit {
  SplitName name = SplitName::kTrain;
  std::vector<QAInstance> instances;
  // Identifies the originating dataset; out-of-distribution evaluation
  // compares these tags.
  std::string source_dataset;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
  // nullptr when absent. Linear scan.
  const QAInstance* find(std::string_view id) const;
  std::size_t n_choices() const {
    return instances.empty() ? 0 : instances.front().choices.size();
  }
};

// Checks the per-instance invariants; throws MalformedRecord with the given
// line number on violation.
void validate_instance(const QAInstance& instance, std::size_t line);

// Parses one JSONL record.
QAInstance parse_instance(std::string_view line_text, std::size_t line);
std::string serialize_instance(const QAInstance& instance);

// Loads a JSONL file, rejecting the whole file on the first bad record.
DatasetSplit load_dataset(const std::filesystem::path& path, SplitName name,
                          std::string source_dataset);
DatasetSplit load_dataset_text(std::string_view text, SplitName name,
                               std::string source_dataset);
void save_dataset(const DatasetSplit& split, const std::filesystem::path& path);

// {"name", "source_dataset", "ids"}
std::string split_manifest_json(const DatasetSplit& split);

// Random train/dev partition; dev size = round(dev_fraction * N). Instances
// keep their original relative order on both sides.
std::pair<DatasetSplit, DatasetSplit> split_train_dev(const DatasetSplit& split,
                                                      double dev_fraction,
                                                      std::uint64_t seed);

// size = max(1, round(fraction * N)). Samples drawn for different fractions
// under one seed are not nested.
DatasetSplit subsample_train(const DatasetSplit& split, double fraction,
                             std::uint64_t seed);

// Synthetic corpus ---------------------------------------------------------

enum class LeakMode { kDeterministic, kNone };

std::string_view to_string(LeakMode mode);
LeakMode parse_leak_mode(std::string_view text);

// Reserved words. None of them is ever drawn for question text.
inline constexpr std::string_view kSupportMarker = "@support";
inline constexpr std::string_view kOpposeMarker = "@oppose";

// How synthetic rationales are written. Shared by the generator and the
// knowledge-backed completion backend so both produce identical text.
struct SyntheticRationaleRule {
  LeakMode leak_mode = LeakMode::kDeterministic;
  std::size_t vocab_size = 48;
  std::size_t noise_length = 3;

  // deterministic: "<marker> <choice> <noise...>"; none: random words of the
  // same length. Noise is a pure function of (question, choice).
  std::string render(std::string_view question, std::string_view choice,
                     bool supports) const;
};

struct SyntheticOptions {
  std::size_t n = 100;
  std::size_t n_choices = 4;
  std::size_t vocab_size = 48;
  LeakMode leak_mode = LeakMode::kDeterministic;
  std::uint64_t seed = 1;

  std::string id_prefix = "syn";
  std::string source_dataset = "synthetic";
  SplitName split_name = SplitName::kTrain;
  std::size_t question_length = 5;
  std::size_t max_choice_length = 2;
  // Question words are "w<question_offset + k>"; choosing a different offset
  // gives a corpus with disjoint question vocabulary.
  std::size_t question_offset = 0;
  // When set, every question ends with a cue word copied from one choice:
  // the gold one with this probability, otherwise a random distractor.
  // Unset means no cue anywhere.
  std::optional<double> cue_gold_rate;
};

struct SyntheticCorpus {
  DatasetSplit split;
  SyntheticRationaleRule rule;
  // rationales[i] holds instance i's per-choice rationales in choice order.
  std::vector<std::vector<std::string>> rationales;
};

SyntheticCorpus generate_synthetic(const SyntheticOptions& options);

// Reference oracle: index of the choice whose rationale carries the support
// marker, or nullopt when none or several do.
std::optional<std::size_t> marker_oracle(
    const std::vector<std::string>& rationales);

// Whitespace tokenization shared by the synthetic tooling.
std::vector<std::string> split_words(std::string_view text);

// 64-bit FNV-1a; stable across platforms.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

}  // namespace rtr

#endif  // RTR_DATASET_H_
