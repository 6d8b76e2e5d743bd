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

#ifndef RTR_RATIONALIZER_H_
#define RTR_RATIONALIZER_H_

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rtr/dataset.h"

namespace rtr {

struct Demonstration {
  std::string question;
  std::vector<std::string> choices;
  std::string gold_answer;
  std::string rationale;
};

// Block layout with {{question}}, {{choices}}, {{target}} and
// {{answer_prefix}} placeholders; {{choices}} expands to "(a) x (b) y ...".
inline constexpr std::string_view kChoicesTemplate =
    "Q: {{question}}\nAnswer Choices: {{choices}}\nA: {{answer_prefix}} {{target}}.";
// Yes/no datasets list no choices.
inline constexpr std::string_view kNoChoicesTemplate =
    "Q: {{question}}\nA: {{answer_prefix}} {{target}}.";

struct PromptSpec {
  std::vector<Demonstration> demonstrations;
  std::string template_id = "choices";
  std::string answer_prefix = "The answer is";
  // Empty means: pick by template_id ("no_choices" or anything else).
  std::string block_template;

  const std::string& resolved_template() const;
  // Throws UsageError when the prompt spec is unusable.
  void validate() const;
  // Canonical JSON; hashing this identifies the prompt.
  std::string to_json() const;
  static PromptSpec from_json(std::string_view text);
  // JSON file; "template_file" is resolved relative to this file.
  static PromptSpec load(const std::filesystem::path& path);
  // SHA-256 of to_json(), hex.
  std::string hash() const;
};

// "(a) shirt pocket (b) inkwell"
std::string letter_choices(const std::vector<std::string>& choices);

// Demonstrations, then the new question with the stub
// "A: The answer is <target_choice>." left open for the rationale.
std::string render_prompt(const PromptSpec& spec, std::string_view question,
                          const std::vector<std::string>& choices,
                          std::string_view target_choice);

struct CompletionParams {
  std::size_t max_new_tokens = 64;
  std::vector<std::string> stop_sequences = {"\n\nQ:", "\n\n"};
};

// A frozen text-completion model decoded greedily. Implementations must be
// safe to call from several threads at once.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string identity() const = 0;
  virtual std::string complete(const std::string& prompt,
                               const CompletionParams& params) = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Deterministic stand-in: a table from prompt hash to completion, with a
// hash-derived fallback string for prompts not in the table.
class MockBackend : public CompletionBackend {
 public:
  explicit MockBackend(std::map<std::string, std::string> table = {},
                       std::string identity = "mock");
  std::string identity() const override { return identity_; }
  std::string complete(const std::string& prompt,
                       const CompletionParams& params) override;

  static std::string key_for(std::string_view prompt);
  static std::string fallback_for(std::string_view prompt);

 private:
  std::map<std::string, std::string> table_;
  std::string identity_;
};

// Rationalizer for synthetic corpora. It knows each question's answer and
// writes rationales with the corpus rule: supporting for the known answer,
// opposing for every other choice. It reads the question and target choice
// back out of the prompt, so it never sees gold indices.
class KnowledgeBackend : public CompletionBackend {
 public:
  KnowledgeBackend(SyntheticRationaleRule rule,
                   std::unordered_map<std::string, std::string> answers);
  // Answer table from every instance of the given splits.
  static KnowledgeBackend from_splits(SyntheticRationaleRule rule,
                                      const std::vector<const DatasetSplit*>& splits);

  std::string identity() const override;
  std::string complete(const std::string& prompt,
                       const CompletionParams& params) override;

 private:
  SyntheticRationaleRule rule_;
  std::unordered_map<std::string, std::string> answers_;
};

// Wire protocol: POST {"prompt", "max_new_tokens", "stop", "greedy": true}
// to <url>, expecting {"text"}. Credentials, when needed, come from the
// RTR_BACKEND_TOKEN environment variable as a bearer token.
class HttpBackend : public CompletionBackend {
 public:
  explicit HttpBackend(std::string url, int timeout_seconds = 60);
  std::string identity() const override { return "http:" + url_; }
  std::string complete(const std::string& prompt,
                       const CompletionParams& params) override;

 private:
  std::string url_;
  std::string host_;
  std::string path_;
  int timeout_seconds_;
};

std::string completion_request_json(const std::string& prompt,
                                    const CompletionParams& params);
// Throws BackendError on a malformed body.
std::string parse_completion_response(std::string_view body);

struct RationaleSet {
  std::string instance_id;
  std::vector<std::string> rationales;
  std::string generator_tag;
  bool perturbed = false;
  // Per choice: the backend returned nothing usable and the placeholder was
  // substituted.
  std::vector<bool> placeholder;
  // Per choice: the completion ran to max_new_tokens without a stop sequence.
  std::vector<bool> truncated;

  bool operator==(const RationaleSet&) const = default;
};

// Strips leading whitespace, cuts at the first stop sequence, strips
// trailing whitespace. Sets *hit_stop when a stop sequence was found.
std::string trim_completion(std::string_view raw,
                            const std::vector<std::string>& stops,
                            bool* hit_stop = nullptr);

struct GenerationOptions {
  CompletionParams params;
  std::size_t parallelism = 4;
  std::size_t max_attempts = 3;
};

// One completion per choice, in choice order. Never reads gold_index.
RationaleSet generate_rationales(CompletionBackend& backend,
                                 const PromptSpec& spec,
                                 const QAInstance& instance,
                                 const GenerationOptions& options = {});

// Cache ------------------------------------------------------------------

std::string sha256_hex(std::string_view data);

std::string rationale_cache_key(const QAInstance& instance,
                                const std::string& prompt_hash,
                                const std::string& backend_identity,
                                const CompletionParams& params);

// Append-only JSONL of {"key", "rationales", "generator_tag", "truncated"}. Concurrent
// readers, one writer at a time. An unreadable line is skipped, logged and
// counted; it never becomes a hit.
class RationaleCache {
 public:
  RationaleCache() = default;  // in-memory only
  explicit RationaleCache(std::filesystem::path path);

  std::optional<RationaleSet> get(const std::string& key) const;
  void put(const std::string& key, const RationaleSet& value);

  std::size_t size() const;
  std::size_t corrupt_entries() const { return corrupt_; }

 private:
  struct Entry {
    std::vector<std::string> rationales;
    std::string generator_tag;
    std::vector<bool> truncated;
  };

  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
  std::size_t corrupt_ = 0;
};

struct RationalizeStats {
  std::size_t total = 0;
  std::size_t cached = 0;
  std::size_t generated = 0;
};

// Rationales for every instance of a split, in split order. Cache hits skip
// the backend; fresh results are written to the cache one instance at a
// time, so an interrupted run resumes where it stopped.
std::vector<RationaleSet> rationalize_split(CompletionBackend& backend,
                                            const PromptSpec& spec,
                                            const DatasetSplit& split,
                                            const GenerationOptions& options,
                                            RationaleCache* cache,
                                            RationalizeStats* stats = nullptr);

// Rationale files ---------------------------------------------------------

// JSONL of {"id", "rationales", "generator_tag", "placeholder", "truncated"}.
void save_rationale_sets(const std::vector<RationaleSet>& sets,
                         const std::filesystem::path& path);
std::map<std::string, RationaleSet> load_rationale_sets(
    const std::filesystem::path& path);

}  // namespace rtr

#endif  // RTR_RATIONALIZER_H_
