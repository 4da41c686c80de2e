#pragma once

// Dense double-precision kernels behind the autodiff engine.
//
// Every kernel has a portable scalar reference implementation and an
// AVX2+FMA variant. The variant is picked once at startup from CPUID and can
// be overridden (tests pin both tables against each other).

#include <cstddef>
#include <string_view>

namespace nifm::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// All matrices are row-major with explicit leading dimensions.
struct KernelTable {
  /// y[i] += a * x[i]
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  /// sum_i x[i] * y[i]
  double (*dot)(std::size_t n, const double* x, const double* y);
  /// C[M x N] (+)= A[M x K] * B[K x N]
  void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                  const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate);
  /// C[M x N] (+)= A[M x K] * B[N x K]^T
  void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                  const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate);
  /// C[M x N] (+)= A[K x M]^T * B[K x N]
  void (*gemm_tn)(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                  const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate);
  /// y[i] = max(x[i], 0)
  void (*relu)(std::size_t n, const double* x, double* y);
  /// gx[i] += (x[i] > 0) ? gy[i] : 0
  void (*relu_backward)(std::size_t n, const double* x, const double* gy, double* gx);
};

const KernelTable& scalar_table();
/// Only valid to call through when `cpu_supports(Isa::Avx2)` is true.
const KernelTable& avx2_table();

bool cpu_supports(Isa isa);
Isa detected_isa();

/// The table used by the rest of the library.
const KernelTable& active();
Isa active_isa();
/// Forces a specific ISA; throws std::invalid_argument if the CPU lacks it.
void set_active_isa(Isa isa);

}  // namespace nifm::kernels
