#include "mate/simd/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "mate/simd/reference.hpp"

#if defined(MATE_HAVE_AVX2)
namespace mate::simd::avx2 {
void gemm_nn(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*, std::size_t, float*,
             std::size_t);
void gemm_nt(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*, std::size_t, float*,
             std::size_t);
void gemm_tn(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*, std::size_t, float*,
             std::size_t);
float dot(const float*, const float*, std::size_t);
void axpy(float, const float*, float*, std::size_t);
}  // namespace mate::simd::avx2
#endif

namespace mate::simd {

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::avx2:
            return "avx2";
        case Isa::scalar:
            break;
    }
    return "scalar";
}

bool cpu_supports_avx2_fma() noexcept {
#if defined(MATE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& scalar_kernels() noexcept {
    static const KernelTable table{Isa::scalar,           &ref::gemm_nn<float>, &ref::gemm_nt<float>,
                                   &ref::gemm_tn<float>, &ref::dot<float>,     &ref::axpy<float>};
    return table;
}

const KernelTable* avx2_kernels() noexcept {
#if defined(MATE_HAVE_AVX2)
    static const KernelTable table{Isa::avx2,    &avx2::gemm_nn, &avx2::gemm_nt,
                                   &avx2::gemm_tn, &avx2::dot,   &avx2::axpy};
    static const bool supported = cpu_supports_avx2_fma();
    return supported ? &table : nullptr;
#else
    return nullptr;
#endif
}

static const KernelTable& select_kernels() noexcept {
    const char* force = std::getenv("MATE_FORCE_SCALAR");
    if (force != nullptr && std::strcmp(force, "0") != 0 && force[0] != '\0') return scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    return scalar_kernels();
}

const KernelTable& active_kernels() noexcept {
    static const KernelTable& table = select_kernels();
    return table;
}

}  // namespace mate::simd
