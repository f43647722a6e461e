// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2 double precision kernels.  Compiled with -mavx2 but without
// -mfma: mm_nn and mm_tn must add partial products in the same order as
// the scalar loops so that both backends produce bitwise identical
// results.  mm_nt uses 4-lane partial sums and is equivalent only up to
// rounding.
#include "promptdst/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define PDST_HAVE_AVX2_BUILD 1
#include <immintrin.h>

#include <cstring>
#endif

namespace pdst::kernels {

#if PDST_HAVE_AVX2_BUILD
namespace {

void clear(double* c, size_t count, bool accumulate) {
  if (!accumulate) {
    std::memset(c, 0, count * sizeof(double));
  }
}

void mm_nn_avx2(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  const size_t n4 = n & ~size_t{3};
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d va = _mm256_set1_pd(aip);
      const double* bp = b + p * n;
      size_t j = 0;
      for (; j < n4; j += 4) {
        __m256d vc = _mm256_loadu_pd(ci + j);
        __m256d vb = _mm256_loadu_pd(bp + j);
        vc = _mm256_add_pd(vc, _mm256_mul_pd(va, vb));
        _mm256_storeu_pd(ci + j, vc);
      }
      for (; j < n; ++j) {
        ci[j] += aip * bp[j];
      }
    }
  }
}

void mm_nt_avx2(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  const size_t k4 = k & ~size_t{3};
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      __m256d vacc = _mm256_setzero_pd();
      size_t p = 0;
      for (; p < k4; p += 4) {
        __m256d va = _mm256_loadu_pd(ai + p);
        __m256d vb = _mm256_loadu_pd(bj + p);
        vacc = _mm256_add_pd(vacc, _mm256_mul_pd(va, vb));
      }
      alignas(32) double lanes[4];
      _mm256_store_pd(lanes, vacc);
      double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
      for (; p < k; ++p) {
        acc += ai[p] * bj[p];
      }
      ci[j] += acc;
    }
  }
}

void mm_tn_avx2(double* c, const double* a, const double* b, size_t m,
                size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  const size_t n4 = n & ~size_t{3};
  for (size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double api = a[p * m + i];
      const __m256d va = _mm256_set1_pd(api);
      double* ci = c + i * n;
      size_t j = 0;
      for (; j < n4; j += 4) {
        __m256d vc = _mm256_loadu_pd(ci + j);
        __m256d vb = _mm256_loadu_pd(bp + j);
        vc = _mm256_add_pd(vc, _mm256_mul_pd(va, vb));
        _mm256_storeu_pd(ci + j, vc);
      }
      for (; j < n; ++j) {
        ci[j] += api * bp[j];
      }
    }
  }
}

void axpy_avx2(double* y, double alpha, const double* x, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const size_t n4 = n & ~size_t{3};
  size_t i = 0;
  for (; i < n4; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d vx = _mm256_loadu_pd(x + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(va, vx));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

void add_row_avx2(double* x, const double* b, size_t m, size_t n) {
  const size_t n4 = n & ~size_t{3};
  for (size_t i = 0; i < m; ++i) {
    double* xi = x + i * n;
    size_t j = 0;
    for (; j < n4; j += 4) {
      __m256d vx = _mm256_loadu_pd(xi + j);
      __m256d vb = _mm256_loadu_pd(b + j);
      _mm256_storeu_pd(xi + j, _mm256_add_pd(vx, vb));
    }
    for (; j < n; ++j) {
      xi[j] += b[j];
    }
  }
}

}  // namespace

bool avx2_available() { return __builtin_cpu_supports("avx2") != 0; }

const Ops& avx2_ops() {
  static const Ops ops{mm_nn_avx2, mm_nt_avx2, mm_tn_avx2, axpy_avx2,
                       add_row_avx2, "avx2"};
  return ops;
}

#else  // !PDST_HAVE_AVX2_BUILD

bool avx2_available() { return false; }

const Ops& avx2_ops() { return scalar_ops(); }

#endif

}  // namespace pdst::kernels
