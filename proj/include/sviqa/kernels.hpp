#pragma once

// Dense row-major kernels behind the tensor ops. Each kernel has a serial
// reference and an OpenMP version that splits work by output row; both
// accumulate every output element in the same order, so their results are
// bit-identical and the serial path doubles as the test oracle.

#include <cstddef>

namespace sviqa::kernels {

enum class Backend { serial, parallel };

// Process-wide selection used by the tensor ops. Defaults to parallel.
void set_backend(Backend b);
Backend backend();

// Kernels below this many multiply-adds always run serially.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {
// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C[k×n] += A[m×k]ᵀ · B[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal);
// y = (x - mean) / sqrt(var + eps); stores per-row inverse std in inv_std.
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps);
}  // namespace serial

namespace parallel {
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal);
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps);
}  // namespace parallel

// Dispatch on backend() and problem size.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal);
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps);

// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace sviqa::kernels
