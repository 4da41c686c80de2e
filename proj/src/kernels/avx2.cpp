// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include "nifm/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace nifm::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d y0 = _mm256_loadu_pd(y + i);
    __m256d y1 = _mm256_loadu_pd(y + i + 4);
    y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), y0);
    y1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), y1);
    _mm256_storeu_pd(y + i, y0);
    _mm256_storeu_pd(y + i + 4, y1);
  }
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

// Row i of C stays hot while the rows of B stream past it.
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * ldc;
    if (!accumulate) std::fill_n(c, N, 0.0);
    const double* a = A + i * lda;
    for (std::size_t p = 0; p < K; ++p)
      if (a[p] != 0.0) axpy(N, a[p], B + p * ldb, c);
  }
}

// Four rows of A share each load of a row of B; A is walked once, B (the
// smaller operand in every caller) is re-read per block.
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    const double* a0 = A + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * ldb;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= K; p += 4) {
        const __m256d vb = _mm256_loadu_pd(b + p);
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + p), vb, s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + p), vb, s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a2 + p), vb, s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a3 + p), vb, s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < K; ++p) {
        r0 += a0[p] * b[p];
        r1 += a1[p] * b[p];
        r2 += a2[p] * b[p];
        r3 += a3[p] * b[p];
      }
      double* c = C + i * ldc + j;
      if (accumulate) {
        c[0] += r0;
        c[ldc] += r1;
        c[2 * ldc] += r2;
        c[3 * ldc] += r3;
      } else {
        c[0] = r0;
        c[ldc] = r1;
        c[2 * ldc] = r2;
        c[3 * ldc] = r3;
      }
    }
  }
  for (; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const double v = dot(K, A + i * lda, B + j * ldb);
      C[i * ldc + j] = accumulate ? C[i * ldc + j] + v : v;
    }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < M; ++i) std::fill_n(C + i * ldc, N, 0.0);
  for (std::size_t p = 0; p < K; ++p) {
    const double* a = A + p * lda;
    const double* b = B + p * ldb;
    for (std::size_t i = 0; i < M; ++i)
      if (a[i] != 0.0) axpy(N, a[i], b, C + i * ldc);
  }
}

void relu(std::size_t n, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* gy, double* gx) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) gx[i] += gy[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{axpy, dot, gemm_nn, gemm_nt, gemm_tn, relu, relu_backward};
  return table;
}

}  // namespace nifm::kernels
