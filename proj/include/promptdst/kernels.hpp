// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace pdst::kernels {

// Dense double-precision primitives behind the model's inner loops.
// Two implementations exist: a scalar reference and an AVX2 variant.
// mm_nn and mm_tn accumulate in the same order in both, so they agree
// bit-for-bit; mm_nt reduces in lanes and agrees to rounding error.
struct Ops {
  // C[m x n] = (accumulate ? C : 0) + A[m x k] * B[k x n]
  void (*mm_nn)(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate);
  // C[m x n] = (accumulate ? C : 0) + A[m x k] * B[n x k]^T
  void (*mm_nt)(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate);
  // C[m x n] = (accumulate ? C : 0) + A[k x m]^T * B[k x n]
  void (*mm_tn)(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate);
  // y[i] += alpha * x[i]
  void (*axpy)(double* y, double alpha, const double* x, size_t n);
  // X[r, :] += b for every row r of X[m x n]
  void (*add_row)(double* x, const double* b, size_t m, size_t n);
  std::string_view name;
};

const Ops& scalar_ops();
const Ops& avx2_ops();

bool avx2_available();

// Selected once per process: PROMPTDST_KERNELS={scalar,avx2} overrides the
// cpuid-based default. An avx2 request on hardware without it falls back to
// scalar.
const Ops& active();

}  // namespace pdst::kernels
