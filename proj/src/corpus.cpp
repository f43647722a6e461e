// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include "promptdst/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "promptdst/errors.hpp"
#include "promptdst/text.hpp"

namespace pdst {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void schema_fail(const std::string& conv_id, size_t turn,
                              const std::string& what) {
  throw data_error("schema violation in conversation \"" + conv_id +
                   "\" turn " + std::to_string(turn) + ": " + what);
}

Utterance make_utterance(Utterance::Speaker sp, const std::string& raw) {
  Utterance u;
  u.speaker = sp;
  u.raw_text = trim(raw);
  u.text = normalize(raw);
  return u;
}

std::string history_impl(const Conversation& conv, size_t t, size_t max_words,
                         bool raw) {
  if (t >= conv.turns.size()) {
    throw std::out_of_range("turn index " + std::to_string(t) +
                            " out of range for conversation " + conv.id);
  }
  std::vector<std::string> pieces;
  std::vector<size_t> words;
  for (size_t i = 0; i <= t; ++i) {
    const Turn& turn = conv.turns[i];
    if (turn.system_utterance) {
      const auto& u = *turn.system_utterance;
      pieces.push_back("[system] " + (raw ? u.raw_text : u.text));
      words.push_back(1 + split_ws(raw ? u.raw_text : u.text).size());
    }
    const auto& u = turn.user_utterance;
    pieces.push_back("[user] " + (raw ? u.raw_text : u.text));
    words.push_back(1 + split_ws(raw ? u.raw_text : u.text).size());
  }
  size_t total = 0;
  for (size_t w : words) {
    total += w;
  }
  size_t start = 0;
  while (start + 1 < pieces.size() && total > max_words) {
    total -= words[start];
    ++start;
  }
  return join({pieces.begin() + start, pieces.end()}, " ");
}

}  // namespace

std::vector<Conversation> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open corpus file: " + path);
  }
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw data_error("invalid JSON in " + path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("conversations") ||
      !doc["conversations"].is_array()) {
    throw data_error(path + ": top level must be {\"conversations\": [...]}");
  }

  std::vector<Conversation> corpus;
  std::set<std::string> seen_ids;
  for (const auto& jc : doc["conversations"]) {
    Conversation conv;
    if (!jc.is_object() || !jc.contains("id") || !jc["id"].is_string()) {
      throw data_error(path + ": conversation missing string \"id\"");
    }
    conv.id = jc["id"].get<std::string>();
    if (!seen_ids.insert(conv.id).second) {
      throw data_error(path + ": duplicate conversation id \"" + conv.id +
                       "\"");
    }
    if (jc.contains("domains")) {
      if (!jc["domains"].is_array()) {
        schema_fail(conv.id, 0, "\"domains\" must be an array");
      }
      for (const auto& d : jc["domains"]) {
        if (!d.is_string()) {
          schema_fail(conv.id, 0, "\"domains\" entries must be strings");
        }
        conv.domains.push_back(d.get<std::string>());
      }
    }
    if (!jc.contains("turns") || !jc["turns"].is_array() ||
        jc["turns"].empty()) {
      schema_fail(conv.id, 0, "\"turns\" must be a non-empty array");
    }
    size_t t = 0;
    for (const auto& jt : jc["turns"]) {
      Turn turn;
      if (!jt.is_object()) {
        schema_fail(conv.id, t, "turn must be an object");
      }
      if (!jt.contains("user") || !jt["user"].is_string()) {
        schema_fail(conv.id, t, "missing string field \"user\"");
      }
      std::string user = jt["user"].get<std::string>();
      if (normalize(user).empty()) {
        schema_fail(conv.id, t, "\"user\" is empty");
      }
      turn.user_utterance = make_utterance(Utterance::Speaker::user, user);
      if (jt.contains("system") && !jt["system"].is_null()) {
        if (!jt["system"].is_string()) {
          schema_fail(conv.id, t, "\"system\" must be a string or null");
        }
        std::string sys = jt["system"].get<std::string>();
        if (normalize(sys).empty()) {
          schema_fail(conv.id, t, "\"system\" is empty");
        }
        turn.system_utterance =
            make_utterance(Utterance::Speaker::system, sys);
      }
      if (jt.contains("state")) {
        if (!jt["state"].is_array()) {
          schema_fail(conv.id, t, "\"state\" must be an array of pairs");
        }
        for (const auto& jp : jt["state"]) {
          if (!jp.is_array() || jp.size() != 2 || !jp[0].is_string() ||
              !jp[1].is_string()) {
            schema_fail(conv.id, t, "state entries must be [slot, value]");
          }
          std::string slot = normalize(jp[0].get<std::string>());
          std::string value = normalize(jp[1].get<std::string>());
          if (slot.empty() || value.empty()) {
            schema_fail(conv.id, t, "state slot/value must be non-empty");
          }
          turn.belief_state.emplace(std::move(slot), std::move(value));
        }
      }
      conv.turns.push_back(std::move(turn));
      ++t;
    }
    corpus.push_back(std::move(conv));
  }
  return corpus;
}

void save_corpus(const std::vector<Conversation>& corpus,
                 const std::string& path) {
  ordered_json doc;
  doc["conversations"] = ordered_json::array();
  for (const auto& conv : corpus) {
    ordered_json jc;
    jc["id"] = conv.id;
    jc["domains"] = conv.domains;
    jc["turns"] = ordered_json::array();
    for (const auto& turn : conv.turns) {
      ordered_json jt;
      if (turn.system_utterance) {
        jt["system"] = turn.system_utterance->raw_text;
      } else {
        jt["system"] = nullptr;
      }
      jt["user"] = turn.user_utterance.raw_text;
      jt["state"] = ordered_json::array();
      for (const auto& [slot, value] : turn.belief_state) {
        jt["state"].push_back({slot, value});
      }
      jc["turns"].push_back(std::move(jt));
    }
    doc["conversations"].push_back(std::move(jc));
  }
  std::ofstream out(path);
  if (!out) {
    throw data_error("cannot write corpus file: " + path);
  }
  out << doc.dump(2) << "\n";
}

std::string dialogue_history(const Conversation& conv, size_t t,
                             size_t max_words) {
  return history_impl(conv, t, max_words, false);
}

std::string dialogue_history_raw(const Conversation& conv, size_t t,
                                 size_t max_words) {
  return history_impl(conv, t, max_words, true);
}

std::vector<Instance> make_instances(const std::vector<Conversation>& corpus,
                                     size_t max_history_words) {
  std::vector<Instance> out;
  for (const auto& conv : corpus) {
    for (size_t t = 0; t < conv.turns.size(); ++t) {
      if (conv.turns[t].belief_state.empty()) {
        continue;
      }
      std::string history = dialogue_history(conv, t, max_history_words);
      for (const auto& [slot, value] : conv.turns[t].belief_state) {
        Instance inst;
        inst.history = history;
        inst.slot = slot;
        inst.value = value;
        inst.conversation_id = conv.id;
        inst.turn_index = static_cast<int>(t);
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

std::vector<Conversation> sample_few_shot(
    const std::vector<Conversation>& corpus, const FewShotConfig& cfg) {
  if (!(cfg.ratio > 0.0) || cfg.ratio > 1.0) {
    throw std::invalid_argument("few-shot ratio must be in (0, 1]");
  }
  const size_t n = corpus.size();
  const size_t k =
      std::min(n, static_cast<size_t>(std::ceil(cfg.ratio * n)));
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) {
    idx[i] = i;
  }
  std::mt19937_64 rng(cfg.seed);
  for (size_t i = 0; i < k && n > 0; ++i) {
    size_t j = i + rng() % (n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<Conversation> out;
  out.reserve(k);
  for (size_t i : idx) {
    out.push_back(corpus[i]);
  }
  return out;
}

double value_match_rate(const std::vector<Conversation>& corpus) {
  size_t total = 0;
  size_t matched = 0;
  for (const auto& conv : corpus) {
    for (size_t t = 0; t < conv.turns.size(); ++t) {
      if (conv.turns[t].belief_state.empty()) {
        continue;
      }
      std::string history = dialogue_history(conv, t);
      for (const auto& [slot, value] : conv.turns[t].belief_state) {
        (void)slot;
        ++total;
        if (contains(history, value)) {
          ++matched;
        }
      }
    }
  }
  if (total == 0) {
    throw data_error("value_match_rate: corpus has no (slot, value) pairs");
  }
  return static_cast<double>(matched) / static_cast<double>(total);
}

std::vector<std::string> collect_words(
    const std::vector<Conversation>& corpus) {
  std::set<std::string> words = {"[system]", "[user]"};
  auto add = [&words](const std::string& text) {
    for (auto& w : split_ws(text)) {
      words.insert(std::move(w));
    }
  };
  for (const auto& conv : corpus) {
    for (const auto& turn : conv.turns) {
      if (turn.system_utterance) {
        add(turn.system_utterance->text);
      }
      add(turn.user_utterance.text);
      for (const auto& [slot, value] : turn.belief_state) {
        add(slot);
        add(value);
      }
    }
  }
  return {words.begin(), words.end()};
}

}  // namespace pdst
