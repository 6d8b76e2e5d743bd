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

#ifndef RTR_TOKENIZER_H_
#define RTR_TOKENIZER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtr {

using TokenId = std::int32_t;

// Structural ids shared by every tokenizer. They occupy the first slots of
// the vocabulary and are never produced from ordinary text.
struct SpecialTokens {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kSep = 3;        // opens each choice
  static constexpr TokenId kRationale = 4;  // opens the rationale segment
  static constexpr TokenId kPlaceholder = 5;
  static constexpr TokenId kCount = 6;

  static bool is_special(TokenId id) { return id >= 0 && id < kCount; }
};

// Surface form substituted for an empty completion.
inline constexpr std::string_view kPlaceholderText = "<empty>";

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
  // "word:<hash>" or "char"
  virtual std::string id() const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;
};

// Whitespace-delimited words over a closed vocabulary; unknown words map to
// kUnk. The placeholder text maps to kPlaceholder.
class WordTokenizer : public Tokenizer {
 public:
  explicit WordTokenizer(std::vector<std::string> words);

  // Vocabulary = sorted distinct words of the given texts.
  static WordTokenizer from_texts(std::span<const std::string> texts);
  static WordTokenizer load(const std::filesystem::path& path);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override;
  std::string id() const override;
  void save(const std::filesystem::path& path) const override;

  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// One token per byte, offset past the special ids.
class CharTokenizer : public Tokenizer {
 public:
  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return SpecialTokens::kCount + 256; }
  std::string id() const override { return "char"; }
  void save(const std::filesystem::path& path) const override;
};

// Reads whatever save() wrote.
std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& path);

}  // namespace rtr

#endif  // RTR_TOKENIZER_H_
