// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace pdst {

enum class TemplateId { f1, f2, f3, f4, I, VSEQ };

enum class AnswerRole { slot, value, value_sequence };

struct PromptTemplate {
  TemplateId id = TemplateId::f1;
  std::string pattern;  // contains "[c]" once; answer placeholder last
  AnswerRole answer_role = AnswerRole::slot;
};

struct RenderedPrompt {
  std::string prefix;  // everything before the answer position
  TemplateId template_id = TemplateId::f1;
  std::map<std::string, std::string> bound_values;
};

const char* template_name(TemplateId id);
TemplateId template_id_from_name(const std::string& name);

// The four value prompts, the slot prompt, and the value-sequence
// prompt, byte-exact.
const std::vector<PromptTemplate>& builtin_templates();
const PromptTemplate& builtin_template(TemplateId id);

// Loads custom patterns from a JSON file {"f1": "...", ...}; ids absent
// from the file keep their builtin pattern. Patterns are validated
// against the placeholder invariants.
std::vector<PromptTemplate> load_templates(const std::string& path);
void validate_template(const PromptTemplate& tpl);

RenderedPrompt render_value_prompt(const PromptTemplate& tpl,
                                   const std::string& history,
                                   const std::string& value);
RenderedPrompt render_slot_prompt(const std::string& history,
                                  const std::string& slot);
RenderedPrompt render_valueseq_prompt(const std::string& history);

// Split on "|", trim + normalize pieces, drop empties, deduplicate
// preserving first occurrence.
std::vector<std::string> parse_value_sequence(const std::string& text);

// Every word occurring in the given templates' fixed text (placeholders
// excluded); feeds vocabulary construction.
std::vector<std::string> template_words(
    const std::vector<PromptTemplate>& templates);

}  // namespace pdst
