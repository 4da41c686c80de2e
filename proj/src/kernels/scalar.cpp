#include "nifm/kernels.hpp"

#include <algorithm>

namespace nifm::kernels {
namespace {

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < M; ++i) std::fill_n(C + i * ldc, N, 0.0);
  // Row p of B stays hot while every row of C consumes it.
  for (std::size_t p = 0; p < K; ++p) {
    const double* b = B + p * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const double a = A[i * lda + p];
      if (a != 0.0) axpy(N, a, b, C + i * ldc);
    }
  }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
             const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
  for (std::size_t j = 0; j < N; ++j) {
    const double* b = B + j * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const double v = dot(K, A + i * lda, b);
      C[i * ldc + j] = accumulate ? C[i * ldc + j] + v : v;
    }
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
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* gy, double* gx) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) gx[i] += gy[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{axpy, dot, gemm_nn, gemm_nt, gemm_tn, relu, relu_backward};
  return table;
}

}  // namespace nifm::kernels
