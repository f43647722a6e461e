// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "promptdst/corpus.hpp"

namespace pdst {

// One slot's implicit phrasing: when a generated pair is chosen to be
// implicit, the pair's value is forced to `value` and the utterance
// renders `phrase` instead, so the gold value never appears verbatim.
struct ImplicitAlias {
  std::string value;
  std::string phrase;
};

struct OntologySpec {
  // Ordered (slot, value pool) entries.
  std::vector<std::pair<std::string, std::vector<std::string>>> slots;
  // Fraction of pairs whose value appears verbatim in the utterance.
  double match_fraction = 0.9;
  // Utterance clause patterns; each contains "{s}" and "{v}" once.
  std::vector<std::string> templates;
  std::map<std::string, ImplicitAlias> aliases;
};

OntologySpec load_ontology(const std::string& path);
void save_ontology(const OntologySpec& spec, const std::string& path);
void validate_ontology(const OntologySpec& spec);

// The 8-slot x 16-value benchmark ontology used by the end-to-end tests.
const OntologySpec& benchmark_ontology();

// Deterministic corpus of n two-turn conversations, two new pairs per
// turn over distinct slots.
std::vector<Conversation> synth_corpus(const OntologySpec& spec, size_t n,
                                       std::uint64_t seed);

}  // namespace pdst
