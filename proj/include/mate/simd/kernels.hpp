#pragma once

// Dense float kernels behind every Tensor<float> matmul and attention.
//
// Each kernel exists as a portable scalar reference and, on x86-64, as an
// AVX2+FMA variant compiled in its own translation unit. The variant is
// chosen once at startup from CPUID; MATE_FORCE_SCALAR=1 in the environment
// pins the scalar table. Both tables are exposed so tests can compare them
// element for element.
//
// All GEMMs are row-major and ACCUMULATE into C (C += op(A)·op(B)); callers
// zero C first when they want a plain product.

#include <cstddef>
#include <string_view>

namespace mate::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

// C[m×n] += A[m×k] · B[k×n]
using GemmNN = void (*)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                        const float* b, std::size_t ldb, float* c, std::size_t ldc);
// C[m×n] += A[m×k] · B[n×k]ᵀ
using GemmNT = GemmNN;
// C[m×n] += A[k×m]ᵀ · B[k×n]
using GemmTN = GemmNN;

using Dot = float (*)(const float* x, const float* y, std::size_t n);
// y += alpha·x
using Axpy = void (*)(float alpha, const float* x, float* y, std::size_t n);

struct KernelTable {
    Isa isa;
    GemmNN gemm_nn;
    GemmNT gemm_nt;
    GemmTN gemm_tn;
    Dot dot;
    Axpy axpy;
};

const KernelTable& scalar_kernels() noexcept;

// nullptr when the variant was not built or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels() noexcept;

// Table used by the library; resolved on first call.
const KernelTable& active_kernels() noexcept;

bool cpu_supports_avx2_fma() noexcept;

}  // namespace mate::simd
