// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pdst {

// Word-level vocabulary with dense ids. Tokens are whitespace-delimited
// words; unknown words encode to `unk`. Ids 0..4 are reserved specials.
// For every base word a comma-suffixed variant ("london" -> "london,")
// is also registered, because one of the value-prompt templates renders
// the bound value directly against a comma.
class Vocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eoa = 2;
  static constexpr int unk = 3;
  static constexpr int sep = 4;  // the literal "|"

  Vocabulary() = default;

  // Builds specials + sorted unique words + comma variants.
  static Vocabulary build(const std::vector<std::string>& words);

  // Rebuild from an explicit token list (checkpoint loading). The list
  // must start with the five specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  int id(const std::string& word) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int size() const { return static_cast<int>(tokens_.size()); }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;

  void rebuild_index();
};

}  // namespace pdst
