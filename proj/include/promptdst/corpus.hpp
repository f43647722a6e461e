// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace pdst {

// Belief states are cumulative per turn and stored already accumulated.
using BeliefState = std::set<std::pair<std::string, std::string>>;

struct Utterance {
  enum class Speaker { system, user };
  Speaker speaker = Speaker::user;
  std::string text;      // normalized (lowercase, collapsed whitespace)
  std::string raw_text;  // as found in the file, trimmed only
};

struct Turn {
  std::optional<Utterance> system_utterance;  // absent on a first turn
  Utterance user_utterance;
  BeliefState belief_state;
};

struct Conversation {
  std::string id;
  std::vector<std::string> domains;
  std::vector<Turn> turns;
};

struct Instance {
  std::string history;
  std::string slot;
  std::string value;
  std::string conversation_id;
  int turn_index = 0;
};

struct FewShotConfig {
  double ratio = 1.0;  // in (0, 1]
  std::uint64_t seed = 0;
};

inline constexpr size_t no_word_limit = std::numeric_limits<size_t>::max();

std::vector<Conversation> load_corpus(const std::string& path);
void save_corpus(const std::vector<Conversation>& corpus,
                 const std::string& path);

// Speaker-tagged concatenation of all utterances up to and including the
// user utterance of turn t: "[user] u1 [system] a2 [user] u2". When the
// result exceeds max_words (speaker tags count), whole utterances are
// dropped from the left until it fits; at least the final utterance is
// kept.
std::string dialogue_history(const Conversation& conv, size_t t,
                             size_t max_words = no_word_limit);
// Same shape, but over the raw utterance texts (for the rule-based
// candidate extractor, which keys on capitalization).
std::string dialogue_history_raw(const Conversation& conv, size_t t,
                                 size_t max_words = no_word_limit);

// One instance per (slot, value) pair per turn.
std::vector<Instance> make_instances(const std::vector<Conversation>& corpus,
                                     size_t max_history_words = no_word_limit);

// Deterministic subset at conversation granularity, ceil(ratio * n)
// conversations, original order preserved.
std::vector<Conversation> sample_few_shot(
    const std::vector<Conversation>& corpus, const FewShotConfig& cfg);

// Fraction of gold values whose normalized text occurs as a substring of
// the turn's dialogue history.
double value_match_rate(const std::vector<Conversation>& corpus);

// Distinct words feeding vocabulary construction: utterance words,
// speaker tags, slot and value words.
std::vector<std::string> collect_words(const std::vector<Conversation>& corpus);

}  // namespace pdst
