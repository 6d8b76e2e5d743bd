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

#ifndef RTR_TESTS_TEST_SUPPORT_H_
#define RTR_TESTS_TEST_SUPPORT_H_

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rtr/reasoner.h"
#include "rtr/tokenizer.h"

namespace rtr::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rtr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Reasoner whose forced-token probabilities come from a callback; it has no
// parameters and ignores gradients.
class FakeModel : public ReasonerModel {
 public:
  using Rule = std::function<std::vector<double>(const EncodedInput&, const Tokenizer&)>;

  FakeModel(std::shared_ptr<const Tokenizer> tokenizer, Rule rule, std::size_t max_len = 256)
      : tokenizer_(std::move(tokenizer)), rule_(std::move(rule)), max_len_(max_len) {}

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  std::size_t max_len() const override { return max_len_; }

  std::vector<std::vector<double>> output_distributions(
      const EncodedInput& input) const override {
    const auto forced = forced_token_probabilities(input);
    std::vector<std::vector<double>> out;
    const std::size_t v = tokenizer_->vocab_size();
    for (std::size_t j = 0; j < forced.size(); ++j) {
      std::vector<double> dist(v, (1.0 - forced[j]) / static_cast<double>(v - 1));
      dist[static_cast<std::size_t>(input.answer_token_ids[j])] = forced[j];
      out.push_back(std::move(dist));
    }
    return out;
  }
  std::vector<double> forced_token_probabilities(const EncodedInput& input) const override {
    return rule_(input, *tokenizer_);
  }
  void accumulate_gradient(const EncodedInput&, std::span<const double>) override {}
  std::span<double> parameters() override { return {}; }
  std::span<const double> parameters() const override { return {}; }
  std::span<double> gradients() override { return {}; }
  std::unique_ptr<ReasonerModel> clone() const override {
    return std::make_unique<FakeModel>(tokenizer_, rule_, max_len_);
  }
  void save(const std::filesystem::path&) const override {}

 private:
  std::shared_ptr<const Tokenizer> tokenizer_;
  Rule rule_;
  std::size_t max_len_;
};

// Decoded text of a span of an encoding.
inline std::string span_text(const EncodedInput& input, Span span, const Tokenizer& tok) {
  std::vector<TokenId> ids;
  for (std::size_t i = span.start; i < span.end && i < input.token_ids.size(); ++i) {
    if (input.attention_mask[i]) ids.push_back(input.token_ids[i]);
  }
  return tok.decode(ids);
}

}  // namespace rtr::testing

#endif  // RTR_TESTS_TEST_SUPPORT_H_
