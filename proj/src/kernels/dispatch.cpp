// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <cstring>

#include "promptdst/kernels.hpp"

namespace pdst::kernels {
namespace {

const Ops* select() {
  const char* force = std::getenv("PROMPTDST_KERNELS");
  if (force != nullptr) {
    if (std::strcmp(force, "scalar") == 0) {
      return &scalar_ops();
    }
    if (std::strcmp(force, "avx2") == 0 && avx2_available()) {
      return &avx2_ops();
    }
    // unknown value or unsupported isa: fall through to auto detection
  }
  return avx2_available() ? &avx2_ops() : &scalar_ops();
}

}  // namespace

const Ops& active() {
  static const Ops* chosen = select();
  return *chosen;
}

}  // namespace pdst::kernels
