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

#include "rtr/dataset.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "rtr/error.h"
#include "rtr/random.h"

namespace rtr {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kMinChoices = 2;
constexpr std::size_t kMaxChoices = 8;

std::string word(std::size_t k) { return "w" + std::to_string(k); }

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::string_view to_string(SplitName name) {
  switch (name) {
    case SplitName::kTrain:
      return "train";
    case SplitName::kDev:
      return "dev";
    case SplitName::kTest:
      return "test";
  }
  return "train";
}

SplitName parse_split_name(std::string_view text) {
  if (text == "train") return SplitName::kTrain;
  if (text == "dev") return SplitName::kDev;
  if (text == "test") return SplitName::kTest;
  throw UsageError("unknown split name: " + std::string(text));
}

const QAInstance* DatasetSplit::find(std::string_view id) const {
  for (const auto& instance : instances) {
    if (instance.id == id) return &instance;
  }
  return nullptr;
}

void validate_instance(const QAInstance& instance, std::size_t line) {
  if (instance.id.empty()) throw MalformedRecord(line, "empty id");
  const std::size_t n = instance.choices.size();
  if (n < kMinChoices || n > kMaxChoices) {
    throw MalformedRecord(line, "expected 2-8 choices, got " + std::to_string(n));
  }
  std::set<std::string_view> seen;
  for (const auto& choice : instance.choices) {
    if (choice.empty()) throw MalformedRecord(line, "empty choice text");
    if (!seen.insert(choice).second) {
      throw MalformedRecord(line, "duplicate choice text '" + choice + "'");
    }
  }
  if (instance.gold_index < 0 ||
      static_cast<std::size_t>(instance.gold_index) >= n) {
    throw MalformedRecord(line, "gold_index " +
                                    std::to_string(instance.gold_index) +
                                    " out of range for " + std::to_string(n) +
                                    " choices");
  }
}

QAInstance parse_instance(std::string_view line_text, std::size_t line) {
  nlohmann::json record;
  try {
    record = nlohmann::json::parse(line_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedRecord(line, std::string("invalid JSON: ") + e.what());
  }
  if (!record.is_object()) throw MalformedRecord(line, "record is not an object");

  auto require = [&](const char* key) -> const nlohmann::json& {
    auto it = record.find(key);
    if (it == record.end()) {
      throw MalformedRecord(line, std::string("missing field '") + key + "'");
    }
    return *it;
  };

  QAInstance instance;
  const auto& id = require("id");
  const auto& question = require("question");
  const auto& choices = require("choices");
  const auto& gold = require("gold_index");
  if (!id.is_string()) throw MalformedRecord(line, "id must be a string");
  if (!question.is_string()) throw MalformedRecord(line, "question must be a string");
  if (!choices.is_array()) throw MalformedRecord(line, "choices must be an array");
  if (!gold.is_number_integer()) {
    throw MalformedRecord(line, "gold_index must be an integer");
  }
  instance.id = id.get<std::string>();
  instance.question = question.get<std::string>();
  for (const auto& c : choices) {
    if (!c.is_string()) throw MalformedRecord(line, "choice must be a string");
    instance.choices.push_back(c.get<std::string>());
  }
  const auto gold_value = gold.get<std::int64_t>();
  if (gold_value < INT32_MIN || gold_value > INT32_MAX) {
    throw MalformedRecord(line, "gold_index out of range");
  }
  instance.gold_index = static_cast<int>(gold_value);
  if (auto it = record.find("rationale"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw MalformedRecord(line, "rationale must be a string or null");
    }
    instance.annotated_rationale = it->get<std::string>();
  }
  validate_instance(instance, line);
  return instance;
}

std::string serialize_instance(const QAInstance& instance) {
  ordered_json record;
  record["id"] = instance.id;
  record["question"] = instance.question;
  record["choices"] = instance.choices;
  record["gold_index"] = instance.gold_index;
  if (instance.annotated_rationale) {
    record["rationale"] = *instance.annotated_rationale;
  } else {
    record["rationale"] = nullptr;
  }
  return record.dump();
}

DatasetSplit load_dataset_text(std::string_view text, SplitName name,
                               std::string source_dataset) {
  DatasetSplit split;
  split.name = name;
  split.source_dataset = std::move(source_dataset);
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    QAInstance instance = parse_instance(line, line_no);
    if (!split.instances.empty() &&
        instance.choices.size() != split.n_choices()) {
      throw ChoiceCountMismatch(line_no, split.n_choices(),
                                instance.choices.size());
    }
    if (!ids.insert(instance.id).second) throw DuplicateId(instance.id);
    split.instances.push_back(std::move(instance));
  }
  return split;
}

DatasetSplit load_dataset(const std::filesystem::path& path, SplitName name,
                          std::string source_dataset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_dataset_text(buffer.str(), name, std::move(source_dataset));
}

void save_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  for (const auto& instance : split.instances) {
    out << serialize_instance(instance) << '\n';
  }
}

std::string split_manifest_json(const DatasetSplit& split) {
  ordered_json manifest;
  manifest["name"] = std::string(to_string(split.name));
  manifest["source_dataset"] = split.source_dataset;
  auto ids = ordered_json::array();
  for (const auto& instance : split.instances) ids.push_back(instance.id);
  manifest["ids"] = std::move(ids);
  return manifest.dump();
}

std::pair<DatasetSplit, DatasetSplit> split_train_dev(const DatasetSplit& split,
                                                      double dev_fraction,
                                                      std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) {
    throw UsageError("dev_fraction must lie in (0, 1)");
  }
  const std::size_t n = split.size();
  if (n < 2) throw EmptySplit("need at least 2 instances to split");
  const auto dev_size =
      static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(n)));
  if (dev_size == 0 || dev_size >= n) {
    throw EmptySplit("dev_fraction " + std::to_string(dev_fraction) + " on " +
                     std::to_string(n) + " instances leaves one side empty");
  }

  Rng rng(seed);
  std::vector<bool> in_dev(n, false);
  for (std::size_t idx : rng.sample_without_replacement(n, dev_size)) {
    in_dev[idx] = true;
  }
  DatasetSplit train{SplitName::kTrain, {}, split.source_dataset};
  DatasetSplit dev{SplitName::kDev, {}, split.source_dataset};
  for (std::size_t i = 0; i < n; ++i) {
    (in_dev[i] ? dev : train).instances.push_back(split.instances[i]);
  }
  return {std::move(train), std::move(dev)};
}

DatasetSplit subsample_train(const DatasetSplit& split, double fraction,
                             std::uint64_t seed) {
  if (split.name != SplitName::kTrain) {
    throw UsageError("subsample_train expects a train split");
  }
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("fraction must lie in (0, 1]");
  }
  const std::size_t n = split.size();
  if (n == 0) throw EmptySplit("cannot subsample an empty split");
  if (fraction == 1.0) return split;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));

  Rng rng(seed);
  auto picked = rng.sample_without_replacement(n, k);
  std::sort(picked.begin(), picked.end());
  DatasetSplit out{split.name, {}, split.source_dataset};
  out.instances.reserve(k);
  for (std::size_t idx : picked) out.instances.push_back(split.instances[idx]);
  return out;
}

// Synthetic corpus ---------------------------------------------------------

std::string_view to_string(LeakMode mode) {
  return mode == LeakMode::kDeterministic ? "deterministic" : "none";
}

LeakMode parse_leak_mode(std::string_view text) {
  if (text == "deterministic") return LeakMode::kDeterministic;
  if (text == "none") return LeakMode::kNone;
  throw UsageError("unknown leak mode: " + std::string(text));
}

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ULL ^ seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::string SyntheticRationaleRule::render(std::string_view question,
                                           std::string_view choice,
                                           bool supports) const {
  std::string key(question);
  key += '\x1f';
  key += choice;
  Rng noise(stable_hash(key));
  std::vector<std::string> words;
  if (leak_mode == LeakMode::kDeterministic) {
    words.emplace_back(supports ? kSupportMarker : kOpposeMarker);
    for (auto& w : split_words(choice)) words.push_back(std::move(w));
    for (std::size_t i = 0; i < noise_length; ++i) {
      words.push_back(word(noise.uniform_index(vocab_size)));
    }
  } else {
    const std::size_t length = 1 + split_words(choice).size() + noise_length;
    for (std::size_t i = 0; i < length; ++i) {
      words.push_back(word(noise.uniform_index(vocab_size)));
    }
  }
  return join_words(words);
}

SyntheticCorpus generate_synthetic(const SyntheticOptions& options) {
  if (options.n < 1) throw UsageError("synthetic corpus needs n >= 1");
  if (options.n_choices < kMinChoices || options.n_choices > kMaxChoices) {
    throw UsageError("synthetic corpus needs 2-8 choices");
  }
  if (options.vocab_size < options.n_choices) {
    throw UsageError("vocab_size must be at least n_choices");
  }
  if (options.max_choice_length < 1 || options.question_length < 1) {
    throw UsageError("synthetic lengths must be positive");
  }
  if (options.cue_gold_rate &&
      !(*options.cue_gold_rate >= 0.0 && *options.cue_gold_rate <= 1.0)) {
    throw UsageError("cue_gold_rate must lie in [0, 1]");
  }

  SyntheticCorpus corpus;
  corpus.rule.leak_mode = options.leak_mode;
  corpus.rule.vocab_size = options.vocab_size;
  corpus.split.name = options.split_name;
  corpus.split.source_dataset = options.source_dataset;

  Rng rng(options.seed);
  const std::size_t width = std::to_string(options.n - 1).size();
  for (std::size_t i = 0; i < options.n; ++i) {
    QAInstance instance;
    std::string index = std::to_string(i);
    instance.id = options.id_prefix + "-" +
                  std::string(width - index.size(), '0') + index;

    std::vector<std::string> q;
    for (std::size_t k = 0; k < options.question_length; ++k) {
      q.push_back(word(options.question_offset + rng.uniform_index(options.vocab_size)));
    }
    instance.question = join_words(q);

    std::set<std::string> used;
    while (instance.choices.size() < options.n_choices) {
      const std::size_t length = 1 + rng.uniform_index(options.max_choice_length);
      std::vector<std::string> c;
      for (std::size_t k = 0; k < length; ++k) {
        c.push_back(word(rng.uniform_index(options.vocab_size)));
      }
      std::string text = join_words(c);
      if (used.insert(text).second) instance.choices.push_back(std::move(text));
    }
    instance.gold_index = static_cast<int>(rng.uniform_index(options.n_choices));

    if (options.cue_gold_rate) {
      std::size_t cue_at = static_cast<std::size_t>(instance.gold_index);
      if (!rng.bernoulli(*options.cue_gold_rate)) {
        cue_at = (cue_at + 1 + rng.uniform_index(options.n_choices - 1)) %
                 options.n_choices;
      }
      instance.question += " " + split_words(instance.choices[cue_at]).front();
    }

    std::vector<std::string> rationales;
    for (std::size_t c = 0; c < options.n_choices; ++c) {
      rationales.push_back(corpus.rule.render(
          instance.question, instance.choices[c],
          c == static_cast<std::size_t>(instance.gold_index)));
    }
    instance.annotated_rationale = rationales[instance.gold_index];
    corpus.rationales.push_back(std::move(rationales));
    corpus.split.instances.push_back(std::move(instance));
  }
  return corpus;
}

std::optional<std::size_t> marker_oracle(
    const std::vector<std::string>& rationales) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < rationales.size(); ++i) {
    const auto words = split_words(rationales[i]);
    if (std::find(words.begin(), words.end(), kSupportMarker) != words.end()) {
      if (found) return std::nullopt;
      found = i;
    }
  }
  return found;
}

}  // namespace rtr
