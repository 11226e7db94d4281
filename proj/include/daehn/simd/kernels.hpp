#pragma once

// Dense row-major GEMM kernels for the batched backbone.
//
// Every kernel exists as a scalar reference and, on x86-64 with AVX2+FMA, a
// vectorized variant. dispatch() picks the widest variant the CPU supports;
// DAEHN_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace daehn::simd {

/// C[m x n] (+)= A[m x k] * B[k x n]
using GemmNN = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C,
                        bool accumulate);
/// C[k x n] (+)= A[m x k]^T * B[m x n]
using GemmTN = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C,
                        bool accumulate);
/// C[m x k] += A[m x n] * B[k x n]^T
using GemmNTAcc = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);

struct KernelTable {
  std::string_view name;
  GemmNN gemm_nn;
  GemmTN gemm_tn;
  GemmNTAcc gemm_nt_acc;
};

const KernelTable& scalar_kernels();

/// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

const KernelTable& dispatch();

}  // namespace daehn::simd
