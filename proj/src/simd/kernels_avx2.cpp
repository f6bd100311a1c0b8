// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and must only be entered through the runtime-dispatched table; keep it free
// of standard-library templates so no AVX-encoded inline copies leak into the
// rest of the program.

#include <immintrin.h>

#include <cstddef>

namespace mate::simd::avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, lo);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

// Shared body of NN and TN: C[i, :] += Σ_p a(i, p) · B[p, :], where a(i, p) is
// A[i, p] (NN) or A[p, i] (TN).
template <bool TransA>
inline float a_at(const float* a, std::size_t lda, std::size_t i, std::size_t p) {
    return TransA ? a[p * lda + i] : a[i * lda + p];
}

template <bool TransA>
void gemm_rank_update(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                      const float* b, std::size_t ldb, float* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        float* c0 = c + (i + 0) * ldc;
        float* c1 = c + (i + 1) * ldc;
        float* c2 = c + (i + 2) * ldc;
        float* c3 = c + (i + 3) * ldc;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256 r00 = _mm256_loadu_ps(c0 + j), r01 = _mm256_loadu_ps(c0 + j + 8);
            __m256 r10 = _mm256_loadu_ps(c1 + j), r11 = _mm256_loadu_ps(c1 + j + 8);
            __m256 r20 = _mm256_loadu_ps(c2 + j), r21 = _mm256_loadu_ps(c2 + j + 8);
            __m256 r30 = _mm256_loadu_ps(c3 + j), r31 = _mm256_loadu_ps(c3 + j + 8);
            for (std::size_t p = 0; p < k; ++p) {
                const float* bp = b + p * ldb + j;
                const __m256 b0 = _mm256_loadu_ps(bp);
                const __m256 b1 = _mm256_loadu_ps(bp + 8);
                __m256 av = _mm256_set1_ps(a_at<TransA>(a, lda, i + 0, p));
                r00 = _mm256_fmadd_ps(av, b0, r00);
                r01 = _mm256_fmadd_ps(av, b1, r01);
                av = _mm256_set1_ps(a_at<TransA>(a, lda, i + 1, p));
                r10 = _mm256_fmadd_ps(av, b0, r10);
                r11 = _mm256_fmadd_ps(av, b1, r11);
                av = _mm256_set1_ps(a_at<TransA>(a, lda, i + 2, p));
                r20 = _mm256_fmadd_ps(av, b0, r20);
                r21 = _mm256_fmadd_ps(av, b1, r21);
                av = _mm256_set1_ps(a_at<TransA>(a, lda, i + 3, p));
                r30 = _mm256_fmadd_ps(av, b0, r30);
                r31 = _mm256_fmadd_ps(av, b1, r31);
            }
            _mm256_storeu_ps(c0 + j, r00);
            _mm256_storeu_ps(c0 + j + 8, r01);
            _mm256_storeu_ps(c1 + j, r10);
            _mm256_storeu_ps(c1 + j + 8, r11);
            _mm256_storeu_ps(c2 + j, r20);
            _mm256_storeu_ps(c2 + j + 8, r21);
            _mm256_storeu_ps(c3 + j, r30);
            _mm256_storeu_ps(c3 + j + 8, r31);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 r0 = _mm256_loadu_ps(c0 + j);
            __m256 r1 = _mm256_loadu_ps(c1 + j);
            __m256 r2 = _mm256_loadu_ps(c2 + j);
            __m256 r3 = _mm256_loadu_ps(c3 + j);
            for (std::size_t p = 0; p < k; ++p) {
                const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
                r0 = _mm256_fmadd_ps(_mm256_set1_ps(a_at<TransA>(a, lda, i + 0, p)), bv, r0);
                r1 = _mm256_fmadd_ps(_mm256_set1_ps(a_at<TransA>(a, lda, i + 1, p)), bv, r1);
                r2 = _mm256_fmadd_ps(_mm256_set1_ps(a_at<TransA>(a, lda, i + 2, p)), bv, r2);
                r3 = _mm256_fmadd_ps(_mm256_set1_ps(a_at<TransA>(a, lda, i + 3, p)), bv, r3);
            }
            _mm256_storeu_ps(c0 + j, r0);
            _mm256_storeu_ps(c1 + j, r1);
            _mm256_storeu_ps(c2 + j, r2);
            _mm256_storeu_ps(c3 + j, r3);
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < 4; ++r) {
                float acc = 0.0f;
                for (std::size_t p = 0; p < k; ++p) acc += a_at<TransA>(a, lda, i + r, p) * b[p * ldb + j];
                c[(i + r) * ldc + j] += acc;
            }
        }
    }
    for (; i < m; ++i) {
        float* ci = c + i * ldc;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256 r0 = _mm256_loadu_ps(ci + j);
            for (std::size_t p = 0; p < k; ++p)
                r0 = _mm256_fmadd_ps(_mm256_set1_ps(a_at<TransA>(a, lda, i, p)), _mm256_loadu_ps(b + p * ldb + j), r0);
            _mm256_storeu_ps(ci + j, r0);
        }
        for (; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t p = 0; p < k; ++p) acc += a_at<TransA>(a, lda, i, p) * b[p * ldb + j];
            ci[j] += acc;
        }
    }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc) {
    gemm_rank_update<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc) {
    gemm_rank_update<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
             std::size_t ldb, float* c, std::size_t ldc) {
    const std::size_t k8 = k & ~std::size_t(7);
    for (std::size_t i = 0; i < m; ++i) {
        const float* ai = a + i * lda;
        float* ci = c + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = b + (j + 0) * ldb;
            const float* b1 = b + (j + 1) * ldb;
            const float* b2 = b + (j + 2) * ldb;
            const float* b3 = b + (j + 3) * ldb;
            __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
            for (std::size_t p = 0; p < k8; p += 8) {
                const __m256 av = _mm256_loadu_ps(ai + p);
                s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
                s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
                s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
                s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
            }
            float t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
            for (std::size_t p = k8; p < k; ++p) {
                t0 += ai[p] * b0[p];
                t1 += ai[p] * b1[p];
                t2 += ai[p] * b2[p];
                t3 += ai[p] * b3[p];
            }
            ci[j + 0] += t0;
            ci[j + 1] += t1;
            ci[j + 2] += t2;
            ci[j + 3] += t3;
        }
        for (; j < n; ++j) {
            const float* bj = b + j * ldb;
            __m256 s = _mm256_setzero_ps();
            for (std::size_t p = 0; p < k8; p += 8) s = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), s);
            float t = hsum(s);
            for (std::size_t p = k8; p < k; ++p) t += ai[p] * bj[p];
            ci[j] += t;
        }
    }
}

float dot(const float* x, const float* y, std::size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
    }
    for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    float t = hsum(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) t += x[i] * y[i];
    return t;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mate::simd::avx2
