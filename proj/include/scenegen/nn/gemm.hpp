#pragma once

#include <cstddef>

#ifdef SCENEGEN_USE_CBLAS
#include <cblas.h>
#endif

namespace scenegen::nn {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
// op(A) is A[m,k] (or A[k,m] transposed), op(B) is B[k,n] (or B[n,k]).

#ifdef SCENEGEN_USE_CBLAS

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

#else

// Portable fallback; loop orders chosen so the inner loop streams rows.
template <typename S>
inline void gemm(bool ta, bool tb, int m, int n, int k, S alpha, const S* a, int lda,
                 const S* b, int ldb, S beta, S* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    S* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == S(0)) {
      for (int j = 0; j < n; ++j) crow[j] = S(0);
    } else if (beta != S(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      S* crow = c + static_cast<std::size_t>(i) * ldc;
      for (int l = 0; l < k; ++l) {
        const S av = alpha * a[static_cast<std::size_t>(i) * lda + l];
        if (av == S(0)) continue;
        const S* brow = b + static_cast<std::size_t>(l) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const S* arow = a + static_cast<std::size_t>(i) * lda;
      S* crow = c + static_cast<std::size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const S* brow = b + static_cast<std::size_t>(j) * ldb;
        S acc = S(0);
        for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
        crow[j] += alpha * acc;
      }
    }
  } else if (ta && !tb) {
    for (int l = 0; l < k; ++l) {
      const S* arow = a + static_cast<std::size_t>(l) * lda;
      const S* brow = b + static_cast<std::size_t>(l) * ldb;
      for (int i = 0; i < m; ++i) {
        const S av = alpha * arow[i];
        if (av == S(0)) continue;
        S* crow = c + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      S* crow = c + static_cast<std::size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        S acc = S(0);
        for (int l = 0; l < k; ++l)
          acc += a[static_cast<std::size_t>(l) * lda + i] * b[static_cast<std::size_t>(j) * ldb + l];
        crow[j] += alpha * acc;
      }
    }
  }
}

#endif

}  // namespace scenegen::nn
