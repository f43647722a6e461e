// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pdst {

// Lowercase, trim, collapse runs of internal whitespace to single spaces.
// Applied to gold labels and predictions alike so metrics compare
// canonical forms.
std::string normalize(std::string_view s);

std::vector<std::string> split_ws(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Whitespace-token F1 between two strings, in [0, 1]. Used to align
// generated value candidates with gold values when they are not an
// exact match.
double token_f1(std::string_view a, std::string_view b);

bool contains(std::string_view haystack, std::string_view needle);

}  // namespace pdst
