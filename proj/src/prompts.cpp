// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include "promptdst/prompts.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "promptdst/errors.hpp"
#include "promptdst/text.hpp"

namespace pdst {
namespace {

size_t count_occurrences(const std::string& s, const std::string& sub) {
  size_t count = 0;
  for (size_t pos = s.find(sub); pos != std::string::npos;
       pos = s.find(sub, pos + sub.size())) {
    ++count;
  }
  return count;
}

std::string replace_first(std::string s, const std::string& from,
                          const std::string& to) {
  size_t pos = s.find(from);
  if (pos != std::string::npos) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

const char* answer_placeholder(AnswerRole role) {
  switch (role) {
    case AnswerRole::slot:
      return "[s]";
    case AnswerRole::value:
      return "[v]";
    case AnswerRole::value_sequence:
      return "";
  }
  return "";
}

}  // namespace

const char* template_name(TemplateId id) {
  switch (id) {
    case TemplateId::f1:
      return "f1";
    case TemplateId::f2:
      return "f2";
    case TemplateId::f3:
      return "f3";
    case TemplateId::f4:
      return "f4";
    case TemplateId::I:
      return "I";
    case TemplateId::VSEQ:
      return "VSEQ";
  }
  return "?";
}

TemplateId template_id_from_name(const std::string& name) {
  for (TemplateId id : {TemplateId::f1, TemplateId::f2, TemplateId::f3,
                        TemplateId::f4, TemplateId::I, TemplateId::VSEQ}) {
    if (name == template_name(id)) {
      return id;
    }
  }
  throw usage_error("unknown template id: " + name);
}

const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = {
      {TemplateId::f1, "[c] belief states: value = [v], slot = [s]",
       AnswerRole::slot},
      {TemplateId::f2, "[c] belief states: [v] = [s]", AnswerRole::slot},
      {TemplateId::f3, "[c] [v] is the value of [s]", AnswerRole::slot},
      {TemplateId::f4, "[c] What is the slot type of [v] ? [s]",
       AnswerRole::slot},
      {TemplateId::I, "[c] belief states: [s] = [v]", AnswerRole::value},
      {TemplateId::VSEQ, "[c] => value : ", AnswerRole::value_sequence},
  };
  return templates;
}

const PromptTemplate& builtin_template(TemplateId id) {
  for (const auto& tpl : builtin_templates()) {
    if (tpl.id == id) {
      return tpl;
    }
  }
  throw std::logic_error("missing builtin template");
}

void validate_template(const PromptTemplate& tpl) {
  const std::string& p = tpl.pattern;
  const std::string name = template_name(tpl.id);
  if (count_occurrences(p, "[c]") != 1) {
    throw usage_error("template " + name + ": \"[c]\" must occur exactly once");
  }
  const std::string answer = answer_placeholder(tpl.answer_role);
  if (!answer.empty()) {
    if (count_occurrences(p, answer) != 1) {
      throw usage_error("template " + name + ": \"" + answer +
                        "\" must occur exactly once");
    }
    if (p.size() < answer.size() ||
        p.compare(p.size() - answer.size(), answer.size(), answer) != 0) {
      throw usage_error("template " + name + ": \"" + answer +
                        "\" must be pattern-final");
    }
  }
  if (tpl.answer_role == AnswerRole::slot &&
      count_occurrences(p, "[v]") != 1) {
    throw usage_error("template " + name + ": \"[v]\" must occur exactly once");
  }
}

std::vector<PromptTemplate> load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open template file: " + path);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw data_error("invalid JSON in " + path + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw data_error(path + ": template file must be a JSON object");
  }
  std::vector<PromptTemplate> out = builtin_templates();
  for (const auto& [key, val] : doc.items()) {
    TemplateId id = template_id_from_name(key);
    if (!val.is_string()) {
      throw data_error(path + ": pattern for " + key + " must be a string");
    }
    for (auto& tpl : out) {
      if (tpl.id == id) {
        tpl.pattern = val.get<std::string>();
        validate_template(tpl);
      }
    }
  }
  return out;
}

RenderedPrompt render_value_prompt(const PromptTemplate& tpl,
                                   const std::string& history,
                                   const std::string& value) {
  if (tpl.answer_role != AnswerRole::slot) {
    throw std::invalid_argument(
        "render_value_prompt requires a slot-answering template");
  }
  if (value.empty()) {
    throw std::invalid_argument("render_value_prompt: empty value");
  }
  std::string filled = replace_first(tpl.pattern, "[c]", history);
  filled = replace_first(filled, "[v]", value);
  size_t pos = filled.rfind("[s]");
  RenderedPrompt r;
  r.prefix = filled.substr(0, pos);
  r.template_id = tpl.id;
  r.bound_values = {{"[c]", history}, {"[v]", value}};
  return r;
}

RenderedPrompt render_slot_prompt(const std::string& history,
                                  const std::string& slot) {
  if (slot.empty()) {
    throw std::invalid_argument("render_slot_prompt: empty slot");
  }
  const PromptTemplate& tpl = builtin_template(TemplateId::I);
  std::string filled = replace_first(tpl.pattern, "[c]", history);
  filled = replace_first(filled, "[s]", slot);
  size_t pos = filled.rfind("[v]");
  RenderedPrompt r;
  r.prefix = filled.substr(0, pos);
  r.template_id = TemplateId::I;
  r.bound_values = {{"[c]", history}, {"[s]", slot}};
  return r;
}

RenderedPrompt render_valueseq_prompt(const std::string& history) {
  const PromptTemplate& tpl = builtin_template(TemplateId::VSEQ);
  RenderedPrompt r;
  r.prefix = replace_first(tpl.pattern, "[c]", history);
  r.template_id = TemplateId::VSEQ;
  r.bound_values = {{"[c]", history}};
  return r;
}

std::vector<std::string> parse_value_sequence(const std::string& text) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  size_t start = 0;
  while (start <= text.size()) {
    size_t bar = text.find('|', start);
    size_t end = bar == std::string::npos ? text.size() : bar;
    std::string piece = normalize(text.substr(start, end - start));
    if (!piece.empty() && seen.insert(piece).second) {
      out.push_back(std::move(piece));
    }
    if (bar == std::string::npos) {
      break;
    }
    start = bar + 1;
  }
  return out;
}

std::vector<std::string> template_words(
    const std::vector<PromptTemplate>& templates) {
  std::set<std::string> words;
  for (const auto& tpl : templates) {
    std::string stripped = tpl.pattern;
    for (const char* ph : {"[c]", "[v]", "[s]"}) {
      while (count_occurrences(stripped, ph) > 0) {
        stripped = replace_first(stripped, ph, " ");
      }
    }
    for (auto& w : split_ws(stripped)) {
      words.insert(std::move(w));
    }
  }
  return {words.begin(), words.end()};
}

}  // namespace pdst
