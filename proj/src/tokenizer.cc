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

#include "rtr/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rtr/dataset.h"
#include "rtr/error.h"

namespace rtr {

namespace {

constexpr std::string_view kCharHeader = "#char";
constexpr std::string_view kWordHeader = "#word";

const char* special_surface(TokenId id) {
  switch (id) {
    case SpecialTokens::kPad:
      return "<pad>";
    case SpecialTokens::kUnk:
      return "<unk>";
    case SpecialTokens::kBos:
      return "<bos>";
    case SpecialTokens::kSep:
      return "<sep>";
    case SpecialTokens::kRationale:
      return "<rationale>";
    case SpecialTokens::kPlaceholder:
      return kPlaceholderText.data();
  }
  return "<unk>";
}

}  // namespace

WordTokenizer::WordTokenizer(std::vector<std::string> words)
    : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const auto id = static_cast<TokenId>(SpecialTokens::kCount + i);
    if (!index_.emplace(words_[i], id).second) {
      throw DataError("duplicate word in vocabulary: " + words_[i]);
    }
  }
}

WordTokenizer WordTokenizer::from_texts(std::span<const std::string> texts) {
  std::set<std::string> vocab;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) {
      if (w != kPlaceholderText) vocab.insert(std::move(w));
    }
  }
  return WordTokenizer(std::vector<std::string>(vocab.begin(), vocab.end()));
}

std::vector<TokenId> WordTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    if (w == kPlaceholderText) {
      ids.push_back(SpecialTokens::kPlaceholder);
      continue;
    }
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? SpecialTokens::kUnk : it->second);
  }
  return ids;
}

std::string WordTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    if (SpecialTokens::is_special(id)) {
      out += special_surface(id);
    } else if (id >= 0 && static_cast<std::size_t>(id) < vocab_size()) {
      out += words_[id - SpecialTokens::kCount];
    } else {
      out += "<unk>";
    }
  }
  return out;
}

std::size_t WordTokenizer::vocab_size() const {
  return SpecialTokens::kCount + words_.size();
}

std::string WordTokenizer::id() const {
  std::uint64_t h = 0;
  for (const auto& w : words_) h = stable_hash(w, h * 31 + 7);
  std::ostringstream out;
  out << "word:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void WordTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << kWordHeader << '\n';
  for (const auto& w : words_) out << w << '\n';
}

WordTokenizer WordTokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kWordHeader) throw DataError("not a word vocabulary: " + path.string());
  std::vector<std::string> words;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return WordTokenizer(std::move(words));
}

std::vector<TokenId> CharTokenizer::encode(std::string_view text) const {
  if (text == kPlaceholderText) return {SpecialTokens::kPlaceholder};
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    ids.push_back(static_cast<TokenId>(SpecialTokens::kCount + c));
  }
  return ids;
}

std::string CharTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (SpecialTokens::is_special(id)) {
      out += special_surface(id);
    } else if (id >= SpecialTokens::kCount &&
               static_cast<std::size_t>(id) < vocab_size()) {
      out += static_cast<char>(id - SpecialTokens::kCount);
    }
  }
  return out;
}

void CharTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << kCharHeader << '\n';
}

std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::string header;
  std::getline(in, header);
  if (header == kCharHeader) return std::make_unique<CharTokenizer>();
  if (header == kWordHeader) {
    return std::make_unique<WordTokenizer>(WordTokenizer::load(path));
  }
  throw DataError("unrecognized vocabulary file " + path.string());
}

}  // namespace rtr
