// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include "promptdst/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "json.hpp"
#include "promptdst/errors.hpp"
#include "promptdst/text.hpp"

namespace pdst {
namespace {

using ordered_json = nlohmann::ordered_json;

size_t count_occurrences(const std::string& s, const std::string& sub) {
  size_t count = 0;
  for (size_t pos = s.find(sub); pos != std::string::npos;
       pos = s.find(sub, pos + sub.size())) {
    ++count;
  }
  return count;
}

std::string fill(std::string tpl, const std::string& slot,
                 const std::string& value) {
  size_t pos = tpl.find("{s}");
  tpl.replace(pos, 3, slot);
  pos = tpl.find("{v}");
  tpl.replace(pos, 3, value);
  return tpl;
}

}  // namespace

void validate_ontology(const OntologySpec& spec) {
  if (spec.slots.size() < 2) {
    throw data_error("ontology spec needs at least 2 slots");
  }
  std::vector<std::string> names;
  for (const auto& [slot, values] : spec.slots) {
    if (normalize(slot).empty()) {
      throw data_error("ontology spec: empty slot name");
    }
    names.push_back(slot);
    if (values.size() < 2) {
      throw data_error("ontology spec: slot \"" + slot +
                       "\" needs at least 2 values");
    }
    for (const auto& v : values) {
      if (normalize(v).empty()) {
        throw data_error("ontology spec: slot \"" + slot +
                         "\" has an empty value");
      }
    }
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw data_error("ontology spec: duplicate slot name");
  }
  if (!(spec.match_fraction >= 0.0 && spec.match_fraction <= 1.0)) {
    throw data_error("ontology spec: match_fraction must be in [0, 1]");
  }
  if (spec.templates.empty()) {
    throw data_error("ontology spec: at least one utterance template");
  }
  for (const auto& tpl : spec.templates) {
    if (count_occurrences(tpl, "{s}") != 1 ||
        count_occurrences(tpl, "{v}") != 1) {
      throw data_error("ontology spec: template \"" + tpl +
                       "\" must contain {s} and {v} exactly once");
    }
  }
  for (const auto& [slot, alias] : spec.aliases) {
    auto it = std::find_if(spec.slots.begin(), spec.slots.end(),
                           [&](const auto& e) { return e.first == slot; });
    if (it == spec.slots.end()) {
      throw data_error("ontology spec: alias for unknown slot \"" + slot +
                       "\"");
    }
    if (std::find(it->second.begin(), it->second.end(), alias.value) ==
        it->second.end()) {
      throw data_error("ontology spec: alias value \"" + alias.value +
                       "\" not in pool of slot \"" + slot + "\"");
    }
    if (alias.phrase.empty() || contains(alias.phrase, alias.value)) {
      throw data_error("ontology spec: alias phrase for slot \"" + slot +
                       "\" must be non-empty and not contain the value");
    }
  }
}

OntologySpec load_ontology(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open ontology spec: " + path);
  }
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw data_error("invalid JSON in " + path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("slots") ||
      !doc["slots"].is_object()) {
    throw data_error(path + ": spec must contain an object \"slots\"");
  }
  OntologySpec spec;
  for (const auto& [slot, values] : doc["slots"].items()) {
    if (!values.is_array()) {
      throw data_error(path + ": slot \"" + slot +
                       "\" must map to an array of values");
    }
    std::vector<std::string> pool;
    for (const auto& v : values) {
      if (!v.is_string()) {
        throw data_error(path + ": values of slot \"" + slot +
                         "\" must be strings");
      }
      pool.push_back(normalize(v.get<std::string>()));
    }
    spec.slots.emplace_back(normalize(slot), std::move(pool));
  }
  if (doc.contains("match_fraction")) {
    if (!doc["match_fraction"].is_number()) {
      throw data_error(path + ": match_fraction must be a number");
    }
    spec.match_fraction = doc["match_fraction"].get<double>();
  }
  if (doc.contains("templates")) {
    if (!doc["templates"].is_array()) {
      throw data_error(path + ": templates must be an array of strings");
    }
    for (const auto& t : doc["templates"]) {
      if (!t.is_string()) {
        throw data_error(path + ": templates must be an array of strings");
      }
      spec.templates.push_back(t.get<std::string>());
    }
  }
  if (doc.contains("aliases")) {
    if (!doc["aliases"].is_object()) {
      throw data_error(path + ": aliases must be an object");
    }
    for (const auto& [slot, ja] : doc["aliases"].items()) {
      if (!ja.is_object() || !ja.contains("value") || !ja.contains("phrase") ||
          !ja["value"].is_string() || !ja["phrase"].is_string()) {
        throw data_error(path + ": alias for \"" + slot +
                         "\" must be {\"value\", \"phrase\"}");
      }
      spec.aliases[normalize(slot)] = {
          normalize(ja["value"].get<std::string>()),
          normalize(ja["phrase"].get<std::string>())};
    }
  }
  validate_ontology(spec);
  return spec;
}

void save_ontology(const OntologySpec& spec, const std::string& path) {
  ordered_json doc;
  doc["slots"] = ordered_json::object();
  for (const auto& [slot, values] : spec.slots) {
    doc["slots"][slot] = values;
  }
  doc["match_fraction"] = spec.match_fraction;
  doc["templates"] = spec.templates;
  doc["aliases"] = ordered_json::object();
  for (const auto& [slot, alias] : spec.aliases) {
    doc["aliases"][slot] = {{"value", alias.value},
                            {"phrase", alias.phrase}};
  }
  std::ofstream out(path);
  if (!out) {
    throw data_error("cannot write ontology spec: " + path);
  }
  out << doc.dump(2) << "\n";
}

const OntologySpec& benchmark_ontology() {
  static const OntologySpec spec = [] {
    OntologySpec s;
    s.slots = {
        {"destination",
         {"london", "paris", "berlin", "madrid", "rome", "vienna", "prague",
          "lisbon", "dublin", "oslo", "helsinki", "warsaw", "athens",
          "budapest", "zurich", "geneva"}},
        {"departure",
         {"cambridge", "oxford", "leeds", "york", "bristol", "glasgow",
          "edinburgh", "cardiff", "belfast", "brighton", "liverpool",
          "manchester", "newcastle", "nottingham", "sheffield", "norwich"}},
        {"day",
         {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday",
          "sunday", "today", "tomorrow", "january", "february", "march",
          "april", "june", "july", "august"}},
        {"time",
         {"07:00", "08:00", "09:00", "10:00", "11:00", "12:00", "13:00",
          "14:00", "15:00", "16:00", "17:00", "17:30", "18:00", "18:30",
          "19:00", "20:00"}},
        {"people",
         {"one", "two", "three", "four", "five", "six", "seven", "eight",
          "nine", "ten", "eleven", "twelve", "thirteen", "fourteen",
          "fifteen", "sixteen"}},
        {"price",
         {"cheap", "moderate", "expensive", "budget", "premium", "luxury",
          "bargain", "economy", "deluxe", "modest", "lavish", "upscale",
          "affordable", "costly", "midrange", "discount"}},
        {"area",
         {"north", "south", "east", "west", "centre", "uptown", "downtown",
          "midtown", "riverside", "harbour", "hillside", "lakeside",
          "seaside", "parkside", "oldtown", "newtown"}},
        {"food",
         {"italian", "chinese", "indian", "thai", "french", "spanish",
          "mexican", "japanese", "korean", "turkish", "greek", "lebanese",
          "vietnamese", "british", "persian", "moroccan"}},
    };
    s.match_fraction = 0.9;
    s.templates = {
        "the {s} is {v}",
        "i want the {s} to be {v}",
        "set the {s} to {v}",
        "please make the {s} {v}",
        "my {s} should be {v}",
    };
    s.aliases = {
        {"destination", {"london", "the capital"}},
        {"departure", {"cambridge", "the university city"}},
        {"day", {"monday", "the first weekday"}},
        {"time", {"17:00", "late afternoon"}},
        {"people", {"two", "just a pair"}},
        {"price", {"cheap", "as low as possible"}},
        {"area", {"centre", "the middle of town"}},
        {"food", {"italian", "pasta and pizza"}},
    };
    validate_ontology(s);
    return s;
  }();
  return spec;
}

std::vector<Conversation> synth_corpus(const OntologySpec& spec, size_t n,
                                       std::uint64_t seed) {
  validate_ontology(spec);
  std::mt19937_64 rng(seed);
  auto pick = [&rng](size_t bound) { return rng() % bound; };

  const size_t n_slots = spec.slots.size();
  const size_t pairs_total = std::min<size_t>(4, n_slots);
  const size_t pairs_turn1 = (pairs_total + 1) / 2;

  std::vector<Conversation> corpus;
  corpus.reserve(n);
  for (size_t c = 0; c < n; ++c) {
    Conversation conv;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth-%04zu", c);
    conv.id = buf;
    conv.domains = {"synth"};

    std::vector<size_t> slot_idx(n_slots);
    for (size_t i = 0; i < n_slots; ++i) {
      slot_idx[i] = i;
    }
    for (size_t i = 0; i < pairs_total; ++i) {
      std::swap(slot_idx[i], slot_idx[i + pick(n_slots - i)]);
    }

    BeliefState state;
    std::vector<std::string> clauses;
    auto add_pair = [&](size_t which) {
      const auto& [slot, pool] = spec.slots[slot_idx[which]];
      const std::string& tpl = spec.templates[pick(spec.templates.size())];
      const bool implicit =
          (static_cast<double>(rng()) / static_cast<double>(rng.max())) >=
              spec.match_fraction &&
          spec.aliases.count(slot) > 0;
      std::string value;
      std::string rendered_value;
      if (implicit) {
        value = spec.aliases.at(slot).value;
        rendered_value = spec.aliases.at(slot).phrase;
      } else {
        value = pool[pick(pool.size())];
        rendered_value = value;
      }
      state.emplace(slot, value);
      clauses.push_back(fill(tpl, slot, rendered_value));
    };

    Turn turn1;
    clauses.clear();
    for (size_t i = 0; i < pairs_turn1; ++i) {
      add_pair(i);
    }
    turn1.user_utterance.speaker = Utterance::Speaker::user;
    turn1.user_utterance.text = join(clauses, " and ");
    turn1.user_utterance.raw_text = turn1.user_utterance.text;
    turn1.belief_state = state;
    conv.turns.push_back(std::move(turn1));

    if (pairs_total > pairs_turn1) {
      Turn turn2;
      clauses.clear();
      for (size_t i = pairs_turn1; i < pairs_total; ++i) {
        add_pair(i);
      }
      Utterance sys;
      sys.speaker = Utterance::Speaker::system;
      sys.text = "ok what else do you need";
      sys.raw_text = sys.text;
      turn2.system_utterance = std::move(sys);
      turn2.user_utterance.speaker = Utterance::Speaker::user;
      turn2.user_utterance.text = join(clauses, " and ");
      turn2.user_utterance.raw_text = turn2.user_utterance.text;
      turn2.belief_state = state;
      conv.turns.push_back(std::move(turn2));
    }
    corpus.push_back(std::move(conv));
  }
  return corpus;
}

}  // namespace pdst
