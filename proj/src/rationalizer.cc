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

#include "rtr/rationalizer.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "rtr/error.h"
#include "rtr/tokenizer.h"
#include "spdlog/spdlog.h"

namespace rtr {

namespace {

using ordered_json = nlohmann::ordered_json;

void replace_all(std::string& text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string fill_block(const std::string& block_template, std::string_view answer_prefix,
                       std::string_view question,
                       const std::vector<std::string>& choices,
                       std::string_view target) {
  // {{question}} goes last so question text containing braces is inert.
  std::string out = block_template;
  replace_all(out, "{{answer_prefix}}", answer_prefix);
  replace_all(out, "{{choices}}", letter_choices(choices));
  replace_all(out, "{{target}}", target);
  replace_all(out, "{{question}}", question);
  return out;
}

std::string rtrim(std::string_view s) {
  std::size_t end = s.size();
  while (end > 0 && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return std::string(s.substr(0, end));
}

std::string_view ltrim(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace

// Prompt -----------------------------------------------------------------

const std::string& PromptSpec::resolved_template() const {
  static const std::string kChoices(kChoicesTemplate);
  static const std::string kNoChoices(kNoChoicesTemplate);
  if (!block_template.empty()) return block_template;
  return template_id == "no_choices" ? kNoChoices : kChoices;
}

void PromptSpec::validate() const {
  if (demonstrations.empty()) {
    throw UsageError("prompt spec needs at least one demonstration");
  }
  for (const auto& demo : demonstrations) {
    if (std::find(demo.choices.begin(), demo.choices.end(), demo.gold_answer) ==
            demo.choices.end() &&
        !demo.choices.empty()) {
      throw UsageError("demonstration answer '" + demo.gold_answer +
                       "' is not among its choices");
    }
    if (demo.choices.empty() && template_id != "no_choices") {
      throw UsageError("demonstration without choices needs template no_choices");
    }
  }
  const auto& tmpl = resolved_template();
  if (tmpl.find("{{question}}") == std::string::npos ||
      tmpl.find("{{target}}") == std::string::npos) {
    throw UsageError("prompt template must contain {{question}} and {{target}}");
  }
}

std::string PromptSpec::to_json() const {
  ordered_json j;
  j["template_id"] = template_id;
  j["answer_prefix"] = answer_prefix;
  j["template"] = resolved_template();
  auto demos = ordered_json::array();
  for (const auto& d : demonstrations) {
    ordered_json dj;
    dj["question"] = d.question;
    dj["choices"] = d.choices;
    dj["gold_answer"] = d.gold_answer;
    dj["rationale"] = d.rationale;
    demos.push_back(std::move(dj));
  }
  j["demonstrations"] = std::move(demos);
  return j.dump();
}

PromptSpec PromptSpec::from_json(std::string_view text) {
  PromptSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.template_id = j.value("template_id", std::string("choices"));
    spec.answer_prefix = j.value("answer_prefix", std::string("The answer is"));
    spec.block_template = j.value("template", std::string());
    for (const auto& d : j.at("demonstrations")) {
      Demonstration demo;
      demo.question = d.at("question").get<std::string>();
      demo.choices = d.value("choices", std::vector<std::string>{});
      demo.gold_answer = d.at("gold_answer").get<std::string>();
      demo.rationale = d.at("rationale").get<std::string>();
      spec.demonstrations.push_back(std::move(demo));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad prompt spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

PromptSpec PromptSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read prompt spec " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto j = nlohmann::json::parse(buffer.str(), nullptr, /*allow_exceptions=*/false);
  if (j.is_object() && j.contains("template_file")) {
    const auto tmpl_path = path.parent_path() / j["template_file"].get<std::string>();
    std::ifstream tin(tmpl_path, std::ios::binary);
    if (!tin) throw UsageError("cannot read prompt template " + tmpl_path.string());
    std::stringstream tbuf;
    tbuf << tin.rdbuf();
    j["template"] = rtrim(tbuf.str());
    j.erase("template_file");
    return from_json(j.dump());
  }
  return from_json(buffer.str());
}

std::string PromptSpec::hash() const { return sha256_hex(to_json()); }

std::string letter_choices(const std::vector<std::string>& choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i > 0) out += ' ';
    out += '(';
    out += static_cast<char>('a' + i);
    out += ") ";
    out += choices[i];
  }
  return out;
}

std::string render_prompt(const PromptSpec& spec, std::string_view question,
                          const std::vector<std::string>& choices,
                          std::string_view target_choice) {
  if (std::find(choices.begin(), choices.end(), target_choice) == choices.end()) {
    throw UnknownChoice(std::string(target_choice));
  }
  if (question.empty()) spdlog::warn("rendering a prompt with an empty question");
  const auto& tmpl = spec.resolved_template();
  std::string prompt;
  for (const auto& demo : spec.demonstrations) {
    prompt += fill_block(tmpl, spec.answer_prefix, demo.question, demo.choices,
                         demo.gold_answer);
    prompt += ' ';
    prompt += demo.rationale;
    prompt += "\n\n";
  }
  prompt += fill_block(tmpl, spec.answer_prefix, question, choices, target_choice);
  return prompt;
}

// Backends ---------------------------------------------------------------

MockBackend::MockBackend(std::map<std::string, std::string> table,
                         std::string identity)
    : table_(std::move(table)), identity_(std::move(identity)) {}

std::string MockBackend::key_for(std::string_view prompt) { return sha256_hex(prompt); }

std::string MockBackend::fallback_for(std::string_view prompt) {
  return " mock rationale " + key_for(prompt).substr(0, 8) + "\n\nQ: next";
}

std::string MockBackend::complete(const std::string& prompt, const CompletionParams&) {
  count_call();
  auto it = table_.find(key_for(prompt));
  return it == table_.end() ? fallback_for(prompt) : it->second;
}

KnowledgeBackend::KnowledgeBackend(SyntheticRationaleRule rule,
                                   std::unordered_map<std::string, std::string> answers)
    : rule_(rule), answers_(std::move(answers)) {}

KnowledgeBackend KnowledgeBackend::from_splits(
    SyntheticRationaleRule rule, const std::vector<const DatasetSplit*>& splits) {
  std::unordered_map<std::string, std::string> answers;
  for (const auto* split : splits) {
    for (const auto& instance : split->instances) {
      answers.emplace(instance.question, instance.choices[instance.gold_index]);
    }
  }
  return KnowledgeBackend(rule, std::move(answers));
}

std::string KnowledgeBackend::identity() const {
  return "knowledge:" + std::string(to_string(rule_.leak_mode)) + ":v" +
         std::to_string(rule_.vocab_size);
}

std::string KnowledgeBackend::complete(const std::string& prompt,
                                       const CompletionParams&) {
  count_call();
  // The open block is the text after the last blank line.
  const std::size_t block_start = prompt.rfind("\n\n");
  std::string_view block(prompt);
  if (block_start != std::string::npos) block.remove_prefix(block_start + 2);

  std::string question;
  if (block.rfind("Q: ", 0) == 0) {
    const std::size_t eol = block.find('\n');
    question = std::string(block.substr(3, eol == std::string_view::npos
                                               ? std::string_view::npos
                                               : eol - 3));
  }
  std::string target;
  const std::size_t a = block.rfind("\nA: ");
  if (a != std::string_view::npos) {
    std::string_view tail = block.substr(a + 4);
    const std::size_t sp = tail.find(" is ");
    if (sp != std::string_view::npos) tail.remove_prefix(sp + 4);
    if (!tail.empty() && tail.back() == '.') tail.remove_suffix(1);
    target = std::string(tail);
  }
  auto it = answers_.find(question);
  const bool supports = it != answers_.end() && it->second == target;
  return " " + rule_.render(question, target, supports) + "\n\nQ:";
}

HttpBackend::HttpBackend(std::string url, int timeout_seconds)
    : url_(std::move(url)), timeout_seconds_(timeout_seconds) {
  const std::size_t scheme = url_.find("://");
  const std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = url_.find('/', host_begin);
  host_ = url_.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url_.substr(slash);
  if (host_.empty() || host_begin >= url_.size()) {
    throw UsageError("bad backend url: " + url_);
  }
}

std::string completion_request_json(const std::string& prompt,
                                    const CompletionParams& params) {
  ordered_json j;
  j["prompt"] = prompt;
  j["max_new_tokens"] = params.max_new_tokens;
  j["stop"] = params.stop_sequences;
  j["greedy"] = true;
  return j.dump();
}

std::string parse_completion_response(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw BackendError("malformed completion response", /*retryable=*/false);
  }
  return j["text"].get<std::string>();
}

std::string HttpBackend::complete(const std::string& prompt,
                                  const CompletionParams& params) {
  count_call();
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  httplib::Headers headers;
  if (const char* token = std::getenv("RTR_BACKEND_TOKEN"); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = client.Post(path_, headers, completion_request_json(prompt, params),
                         "application/json");
  if (!res) {
    throw BackendUnavailable(url_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 500 || res->status == 429) {
    throw BackendUnavailable(url_ + ": HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw BackendError(url_ + ": HTTP " + std::to_string(res->status),
                       /*retryable=*/false);
  }
  return parse_completion_response(res->body);
}

// Generation -------------------------------------------------------------

std::string trim_completion(std::string_view raw,
                            const std::vector<std::string>& stops,
                            bool* hit_stop) {
  // Cut before trimming so a completion that opens with a stop is empty.
  std::size_t cut = raw.size();
  for (const auto& stop : stops) {
    if (stop.empty()) continue;
    cut = std::min(cut, raw.find(stop));
  }
  if (hit_stop) *hit_stop = cut < raw.size();
  return rtrim(ltrim(raw.substr(0, cut)));
}

RationaleSet generate_rationales(CompletionBackend& backend, const PromptSpec& spec,
                                 const QAInstance& instance,
                                 const GenerationOptions& options) {
  const std::size_t n = instance.choices.size();
  std::vector<std::string> prompts;
  prompts.reserve(n);
  for (const auto& choice : instance.choices) {
    prompts.push_back(render_prompt(spec, instance.question, instance.choices, choice));
  }

  std::vector<std::string> raw(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      for (std::size_t attempt = 1;; ++attempt) {
        try {
          raw[i] = backend.complete(prompts[i], options.params);
          break;
        } catch (const BackendError& e) {
          if (!e.retryable() || attempt >= options.max_attempts) {
            failures[i] = std::current_exception();
            break;
          }
          spdlog::warn("retrying completion for {} choice {}: {}", instance.id, i,
                       e.what());
        } catch (...) {
          failures[i] = std::current_exception();
          break;
        }
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.parallelism, 1, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  RationaleSet set;
  set.instance_id = instance.id;
  set.generator_tag = backend.identity() + ":" + spec.hash().substr(0, 12);
  for (std::size_t i = 0; i < n; ++i) {
    bool hit_stop = false;
    std::string text = trim_completion(raw[i], options.params.stop_sequences, &hit_stop);
    const bool truncated =
        !hit_stop && split_words(raw[i]).size() >= options.params.max_new_tokens;
    if (truncated) {
      spdlog::warn("completion for {} choice {} hit max_new_tokens", instance.id, i);
    }
    const bool empty = text.empty();
    if (empty) {
      spdlog::warn("empty completion for {} choice {}; using placeholder",
                   instance.id, i);
      text = std::string(kPlaceholderText);
    }
    set.rationales.push_back(std::move(text));
    set.placeholder.push_back(empty);
    set.truncated.push_back(truncated);
  }
  return set;
}

// Cache ------------------------------------------------------------------

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string rationale_cache_key(const QAInstance& instance,
                                const std::string& prompt_hash,
                                const std::string& backend_identity,
                                const CompletionParams& params) {
  ordered_json j = ordered_json::array();
  j.push_back(instance.id);
  j.push_back(instance.question);
  j.push_back(instance.choices);
  j.push_back(prompt_hash);
  j.push_back(backend_identity);
  j.push_back(params.max_new_tokens);
  j.push_back(params.stop_sequences);
  return sha256_hex(j.dump());
}

RationaleCache::RationaleCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_, std::ios::binary);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    const bool ok = j.is_object() && j.contains("key") && j["key"].is_string() &&
                    j.contains("rationales") && j["rationales"].is_array() &&
                    j.contains("generator_tag") && j["generator_tag"].is_string() &&
                    std::all_of(j["rationales"].begin(), j["rationales"].end(),
                                [](const auto& r) { return r.is_string(); });
    if (!ok) {
      ++corrupt_;
      spdlog::warn("{}", CacheCorrupt(path_->string() + " line " +
                                      std::to_string(line_no) + " skipped")
                             .what());
      continue;
    }
    Entry entry{j["rationales"].get<std::vector<std::string>>(),
                j["generator_tag"].get<std::string>(), {}};
    if (j.contains("truncated") && j["truncated"].is_array() &&
        j["truncated"].size() == entry.rationales.size()) {
      for (const auto& t : j["truncated"]) entry.truncated.push_back(t.is_boolean() && t.get<bool>());
    } else {
      entry.truncated.assign(entry.rationales.size(), false);
    }
    entries_[j["key"].get<std::string>()] = std::move(entry);
  }
}

std::optional<RationaleSet> RationaleCache::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  RationaleSet set;
  set.rationales = it->second.rationales;
  set.generator_tag = it->second.generator_tag;
  for (const auto& r : set.rationales) set.placeholder.push_back(r == kPlaceholderText);
  set.truncated = it->second.truncated;
  return set;
}

void RationaleCache::put(const std::string& key, const RationaleSet& value) {
  std::unique_lock lock(mu_);
  auto it = entries_.find(key);
  std::vector<bool> truncated = value.truncated;
  truncated.resize(value.rationales.size(), false);
  if (it != entries_.end() && it->second.rationales == value.rationales &&
      it->second.generator_tag == value.generator_tag && it->second.truncated == truncated) {
    return;
  }
  entries_[key] = Entry{value.rationales, value.generator_tag, truncated};
  if (path_) {
    ordered_json j;
    j["key"] = key;
    j["rationales"] = value.rationales;
    j["generator_tag"] = value.generator_tag;
    j["truncated"] = truncated;
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to cache " + path_->string());
    out << j.dump() << '\n';
    out.flush();
  }
}

std::size_t RationaleCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// Rationale files ---------------------------------------------------------

std::vector<RationaleSet> rationalize_split(CompletionBackend& backend,
                                            const PromptSpec& spec,
                                            const DatasetSplit& split,
                                            const GenerationOptions& options,
                                            RationaleCache* cache,
                                            RationalizeStats* stats) {
  RationalizeStats local;
  local.total = split.size();
  const std::string prompt_hash = spec.hash();
  std::vector<RationaleSet> out;
  out.reserve(split.size());
  for (const auto& instance : split.instances) {
    const std::string key =
        rationale_cache_key(instance, prompt_hash, backend.identity(), options.params);
    if (cache) {
      if (auto hit = cache->get(key)) {
        hit->instance_id = instance.id;
        out.push_back(std::move(*hit));
        ++local.cached;
        continue;
      }
    }
    RationaleSet set = generate_rationales(backend, spec, instance, options);
    if (cache) cache->put(key, set);
    out.push_back(std::move(set));
    ++local.generated;
  }
  spdlog::info("rationales for {}: {}/{} instances ({} cached, {} generated)",
               to_string(split.name), out.size(), local.total, local.cached,
               local.generated);
  if (stats) *stats = local;
  return out;
}

void save_rationale_sets(const std::vector<RationaleSet>& sets,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write rationale file " + path.string());
  for (const auto& set : sets) {
    ordered_json j;
    j["id"] = set.instance_id;
    j["rationales"] = set.rationales;
    j["generator_tag"] = set.generator_tag;
    j["placeholder"] = set.placeholder;
    j["truncated"] = set.truncated;
    out << j.dump() << '\n';
  }
}

std::map<std::string, RationaleSet> load_rationale_sets(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read rationale file " + path.string());
  std::map<std::string, RationaleSet> sets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RationaleSet set;
      set.instance_id = j.at("id").get<std::string>();
      set.rationales = j.at("rationales").get<std::vector<std::string>>();
      set.generator_tag = j.value("generator_tag", std::string());
      set.placeholder = j.value("placeholder", std::vector<bool>(set.rationales.size()));
      set.truncated = j.value("truncated", std::vector<bool>(set.rationales.size()));
      sets[set.instance_id] = std::move(set);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(line_no, std::string("rationale file: ") + e.what());
    }
  }
  return sets;
}

}  // namespace rtr
