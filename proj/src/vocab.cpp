// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include "promptdst/vocab.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "promptdst/text.hpp"

namespace pdst {
namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eoa>",
                                                    "<unk>", "|"};
  return specials;
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& words) {
  std::set<std::string> base;
  for (const auto& w : words) {
    for (auto& piece : split_ws(w)) {
      base.insert(piece);
    }
  }
  std::set<std::string> all(base);
  for (const auto& w : base) {
    if (w.back() != ',') {
      all.insert(w + ",");
    }
  }
  Vocabulary v;
  v.tokens_ = special_tokens();
  for (const auto& w : all) {
    bool is_special =
        std::find(v.tokens_.begin(), v.tokens_.end(), w) != v.tokens_.end();
    if (!is_special) {
      v.tokens_.push_back(w);
    }
  }
  v.rebuild_index();
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary token list missing specials");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<int>(i));
  }
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_ws(text)) {
    ids.push_back(id(w));
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) {
    words.push_back(token(i));
  }
  return join(words, " ");
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk : it->second;
}

}  // namespace pdst
