#include "sviqa/kernels.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sviqa::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};

// Row bodies shared by both backends so the arithmetic is the same.
inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                        std::size_t n) {
  const double* arow = a + i * k;
  double* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    if (av == 0.0) continue;
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                        std::size_t n) {
  const double* arow = a + i * k;
  double* crow = c + i * n;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    const double* b2 = b1 + k;
    const double* b3 = b2 + k;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      s0 += av * b0[p];
      s1 += av * b1[p];
      s2 += av * b2[p];
      s3 += av * b3[p];
    }
    crow[j] += s0;
    crow[j + 1] += s1;
    crow[j + 2] += s2;
    crow[j + 3] += s3;
  }
  for (; j < n; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] += s;
  }
}

// Output row p of Aᵀ·B.
inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t p, std::size_t m,
                        std::size_t k, std::size_t n) {
  double* crow = c + p * n;
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    if (av == 0.0) continue;
    const double* brow = b + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t r, std::size_t cols, bool causal) {
  const double* xr = x + r * cols;
  double* yr = y + r * cols;
  const std::size_t live = causal ? std::min(cols, r + 1) : cols;
  double mx = xr[0];
  for (std::size_t j = 1; j < live; ++j) mx = std::max(mx, xr[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < live; ++j) {
    yr[j] = std::exp(xr[j] - mx);
    sum += yr[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < live; ++j) yr[j] *= inv;
  for (std::size_t j = live; j < cols; ++j) yr[j] = 0.0;
}

inline void normalize_row(const double* x, double* y, double* inv_std, std::size_t r, std::size_t cols,
                          double eps) {
  const double* xr = x + r * cols;
  double* yr = y + r * cols;
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = xr[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  inv_std[r] = is;
  for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * is;
}

bool use_parallel(std::size_t work) {
  return g_backend.load(std::memory_order_relaxed) == Backend::parallel && work >= kParallelThreshold;
}
}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a, b, c, i, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a, b, c, i, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) gemm_tn_row(a, b, c, p, m, k, n);
}
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x, y, r, cols, causal);
}
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps) {
  for (std::size_t r = 0; r < rows; ++r) normalize_row(x, y, inv_std, r, cols, eps);
}
}  // namespace serial

namespace parallel {
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) gemm_nn_row(a, b, c, static_cast<std::size_t>(i), k, n);
}
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) gemm_nt_row(a, b, c, static_cast<std::size_t>(i), k, n);
}
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long long>(k);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < rows; ++p) gemm_tn_row(a, b, c, static_cast<std::size_t>(p), m, k, n);
}
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal) {
  const auto n = static_cast<long long>(rows);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < n; ++r) softmax_row(x, y, static_cast<std::size_t>(r), cols, causal);
}
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps) {
  const auto n = static_cast<long long>(rows);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < n; ++r) normalize_row(x, y, inv_std, static_cast<std::size_t>(r), cols, eps);
}
}  // namespace parallel

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  use_parallel(m * k * n) ? parallel::gemm_nn(a, b, c, m, k, n) : serial::gemm_nn(a, b, c, m, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  use_parallel(m * k * n) ? parallel::gemm_nt(a, b, c, m, k, n) : serial::gemm_nt(a, b, c, m, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  use_parallel(m * k * n) ? parallel::gemm_tn(a, b, c, m, k, n) : serial::gemm_tn(a, b, c, m, k, n);
}
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols, bool causal) {
  use_parallel(rows * cols * 8) ? parallel::softmax_rows(x, y, rows, cols, causal)
                                : serial::softmax_rows(x, y, rows, cols, causal);
}
void normalize_rows(const double* x, double* y, double* inv_std, std::size_t rows, std::size_t cols,
                    double eps) {
  use_parallel(rows * cols * 8) ? parallel::normalize_rows(x, y, inv_std, rows, cols, eps)
                                : serial::normalize_rows(x, y, inv_std, rows, cols, eps);
}

}  // namespace sviqa::kernels
