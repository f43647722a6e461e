// Copyright (c) 2026 promptdst authors
// SPDX-License-Identifier: Apache-2.0
#include <cstring>

#include "promptdst/kernels.hpp"

namespace pdst::kernels {
namespace {

void clear(double* c, size_t count, bool accumulate) {
  if (!accumulate) {
    std::memset(c, 0, count * sizeof(double));
  }
}

// ikj order: the AVX2 variant vectorizes the j loop and keeps the same
// per-element accumulation order over k.
void mm_nn_scalar(double* c, const double* a, const double* b, size_t m,
                  size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) {
        ci[j] += aip * bp[j];
      }
    }
  }
}

void mm_nt_scalar(double* c, const double* a, const double* b, size_t m,
                  size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) {
        acc += ai[p] * bj[p];
      }
      ci[j] += acc;
    }
  }
}

void mm_tn_scalar(double* c, const double* a, const double* b, size_t m,
                  size_t k, size_t n, bool accumulate) {
  clear(c, m * n, accumulate);
  for (size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double api = a[p * m + i];
      double* ci = c + i * n;
      for (size_t j = 0; j < n; ++j) {
        ci[j] += api * bp[j];
      }
    }
  }
}

void axpy_scalar(double* y, double alpha, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

void add_row_scalar(double* x, const double* b, size_t m, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* xi = x + i * n;
    for (size_t j = 0; j < n; ++j) {
      xi[j] += b[j];
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops{mm_nn_scalar, mm_nt_scalar, mm_tn_scalar, axpy_scalar,
                       add_row_scalar, "scalar"};
  return ops;
}

}  // namespace pdst::kernels
