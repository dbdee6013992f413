#include <doctest.h>

#include <vector>

#include "sviqa/kernels.hpp"
#include "sviqa/rng.hpp"

using namespace sviqa;

namespace {
std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}
}  // namespace

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  const std::size_t m = 67, k = 45, n = 53;
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2), bt = random_vec(n * k, 3), at = random_vec(m * k, 4),
             bm = random_vec(m * n, 9);
  {
    std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
    kernels::serial::gemm_nn(a.data(), b.data(), c1.data(), m, k, n);
    kernels::parallel::gemm_nn(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);
  }
  {
    std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
    kernels::serial::gemm_nt(a.data(), bt.data(), c1.data(), m, k, n);
    kernels::parallel::gemm_nt(a.data(), bt.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);
  }
  {
    std::vector<double> c1(k * n, 0.0), c2(k * n, 0.0);
    kernels::serial::gemm_tn(at.data(), bm.data(), c1.data(), m, k, n);
    kernels::parallel::gemm_tn(at.data(), bm.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);
  }
  for (bool causal : {false, true}) {
    const auto x = random_vec(m * n, 5);
    std::vector<double> y1(m * n), y2(m * n);
    kernels::serial::softmax_rows(x.data(), y1.data(), m, n, causal);
    kernels::parallel::softmax_rows(x.data(), y2.data(), m, n, causal);
    CHECK(y1 == y2);
  }
  {
    const auto x = random_vec(m * n, 6);
    std::vector<double> y1(m * n), y2(m * n), s1(m), s2(m);
    kernels::serial::normalize_rows(x.data(), y1.data(), s1.data(), m, n, 1e-5);
    kernels::parallel::normalize_rows(x.data(), y2.data(), s2.data(), m, n, 1e-5);
    CHECK(y1 == y2);
    CHECK(s1 == s2);
  }
}

TEST_CASE("gemm against a naive triple loop") {
  const std::size_t m = 4, k = 3, n = 5;
  const auto a = random_vec(m * k, 7), b = random_vec(k * n, 8);
  std::vector<double> c(m * n, 0.0);
  kernels::serial::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
}
