#include <cstdlib>
#include <cstring>
#include <string_view>

#include "daehn/simd/kernels.hpp"

namespace daehn::simd {

namespace {

void nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    if (!acc) std::memset(c, 0, n * sizeof(double));
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C, bool acc) {
  if (!acc) std::memset(C, 0, k * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
      C[i * k + p] += s;
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable t{"scalar", nn, tn, nt_acc};
  return t;
}

const KernelTable& dispatch() {
  static const KernelTable* chosen = [] {
    const char* env = std::getenv("DAEHN_SIMD");
    if (env && std::string_view(env) == "scalar") return &scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return t;
    return &scalar_kernels();
  }();
  return *chosen;
}

}  // namespace daehn::simd
