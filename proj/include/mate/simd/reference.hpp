#pragma once

// Scalar reference kernels, templated so the 64-bit tensor path shares them.
// The float scalar KernelTable wraps these instantiations.

#include <cstddef>

namespace mate::simd::ref {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * lda + p];
            const T* bp = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * ldb;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * ldc + j] += acc;
        }
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* ap = a + p * lda;
        const T* bp = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = ap[i];
            T* ci = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mate::simd::ref
