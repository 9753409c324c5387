#include <cstdlib>
#include <cstring>

#include "nvs/core/kernels.hpp"

namespace nvs::kern {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Isa initial_isa() {
    if (const char* env = std::getenv("NVS_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::Scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Isa::Avx2;
    }
    return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

Isa g_isa = initial_isa();

}  // namespace

Isa active_isa() { return g_isa; }

void set_isa(Isa isa) {
    if (isa == Isa::Avx2 && !cpu_has_avx2()) isa = Isa::Scalar;
    g_isa = isa;
}

std::string isa_name(Isa isa) {
    return isa == Isa::Avx2 ? "avx2" : "scalar";
}

#ifdef NVS_NO_AVX2
#define NVS_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#else
#define NVS_DISPATCH(fn, ...)                               \
    do {                                                    \
        if (g_isa == Isa::Avx2) return avx2::fn(__VA_ARGS__); \
        return scalar::fn(__VA_ARGS__);                     \
    } while (0)
#endif

void add(const float* a, const float* b, float* out, size_t n) {
    NVS_DISPATCH(add, a, b, out, n);
}
void sub(const float* a, const float* b, float* out, size_t n) {
    NVS_DISPATCH(sub, a, b, out, n);
}
void mul(const float* a, const float* b, float* out, size_t n) {
    NVS_DISPATCH(mul, a, b, out, n);
}
void scale(const float* a, float s, float* out, size_t n) {
    NVS_DISPATCH(scale, a, s, out, n);
}
void axpy(float s, const float* x, float* y, size_t n) {
    NVS_DISPATCH(axpy, s, x, y, n);
}
float dot(const float* a, const float* b, size_t n) {
    NVS_DISPATCH(dot, a, b, n);
}
float sum(const float* a, size_t n) { NVS_DISPATCH(sum, a, n); }
float sumsq(const float* a, size_t n) { NVS_DISPATCH(sumsq, a, n); }
void vexp(const float* a, float* out, size_t n) { NVS_DISPATCH(vexp, a, out, n); }
void vsigmoid(const float* a, float* out, size_t n) {
    NVS_DISPATCH(vsigmoid, a, out, n);
}
void vsilu(const float* a, float* out, size_t n) { NVS_DISPATCH(vsilu, a, out, n); }
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
    NVS_DISPATCH(gemm, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void adam_update(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1,
                 float bc2) {
    NVS_DISPATCH(adam_update, p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}

#undef NVS_DISPATCH

}  // namespace nvs::kern
