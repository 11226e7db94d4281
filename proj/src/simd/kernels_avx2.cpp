#include "daehn/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <algorithm>
#include <cstring>

namespace daehn::simd {

namespace {

// c[0..n) += a * b[0..n)
inline void axpy(std::size_t n, double a, const double* b, double* c) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    __m256d c1 = _mm256_loadu_pd(c + j + 4);
    c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
    c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4), c1);
    _mm256_storeu_pd(c + j, c0);
    _mm256_storeu_pd(c + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4)
    _mm256_storeu_pd(c + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
  for (; j < n; ++j) c[j] += a * b[j];
}

inline double dot(std::size_t n, const double* a, const double* b) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j + 4), _mm256_loadu_pd(b + j + 4), s1);
  }
  for (; j + 4 <= n; j += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), s0);
  s0 = _mm256_add_pd(s0, s1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, s0);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; j < n; ++j) s += a[j] * b[j];
  return s;
}

constexpr std::size_t kBlock = 1024;

void nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C, bool acc) {
  if (!acc) std::memset(C, 0, m * n * sizeof(double));
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t w = std::min(kBlock, n - j0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) axpy(w, A[i * k + p], B + p * n + j0, C + i * n + j0);
  }
}

void tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C, bool acc) {
  if (!acc) std::memset(C, 0, k * n * sizeof(double));
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t w = std::min(kBlock, n - j0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) axpy(w, A[i * k + p], B + i * n + j0, C + p * n + j0);
  }
}

void nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) C[i * k + p] += dot(n, A + i * n, B + p * n);
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable t{"avx2", nn, tn, nt_acc};
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? &t : nullptr;
}

}  // namespace daehn::simd

#else

namespace daehn::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace daehn::simd

#endif
