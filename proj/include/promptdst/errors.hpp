// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pdst {

// Bad input artifacts: missing files, schema violations, malformed corpora.
// The CLI maps this to exit code 2.
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad invocation: unknown flags, invalid config values. Exit code 1.
struct usage_error : std::runtime_error {
  explicit usage_error(const std::string& what) : std::runtime_error(what) {}
};

// Everything else (non-finite losses, internal failures) surfaces as
// std::runtime_error and exits with code 3.

}  // namespace pdst
