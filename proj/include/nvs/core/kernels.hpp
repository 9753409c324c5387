#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation and, where it pays off, an AVX2 variant. The active
// variant is selected once at startup from CPUID and can be overridden
// with NVS_KERNELS=scalar|avx2 (useful for equivalence tests and for
// bit-stable reruns across machines).
namespace nvs::kern {

enum class Isa { Scalar, Avx2 };

Isa active_isa();
void set_isa(Isa isa);
bool cpu_has_avx2();
std::string isa_name(Isa isa);

// out[i] = a[i] + b[i]
void add(const float* a, const float* b, float* out, size_t n);
// out[i] = a[i] - b[i]
void sub(const float* a, const float* b, float* out, size_t n);
// out[i] = a[i] * b[i]
void mul(const float* a, const float* b, float* out, size_t n);
// out[i] = a[i] * s
void scale(const float* a, float s, float* out, size_t n);
// y[i] += s * x[i]
void axpy(float s, const float* x, float* y, size_t n);

float dot(const float* a, const float* b, size_t n);
float sum(const float* a, size_t n);
float sumsq(const float* a, size_t n);

// out[i] = exp(a[i])
void vexp(const float* a, float* out, size_t n);
// out[i] = 1 / (1 + exp(-a[i]))
void vsigmoid(const float* a, float* out, size_t n);
// out[i] = a[i] * sigmoid(a[i])
void vsilu(const float* a, float* out, size_t n);

// C = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is M x K, op(B) is K x N, C is M x N with leading dims lda/ldb/ldc.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);

// Fused Adam parameter update with bias correction factors
// bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
void adam_update(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1,
                 float bc2);

namespace scalar {
void add(const float* a, const float* b, float* out, size_t n);
void sub(const float* a, const float* b, float* out, size_t n);
void mul(const float* a, const float* b, float* out, size_t n);
void scale(const float* a, float s, float* out, size_t n);
void axpy(float s, const float* x, float* y, size_t n);
float dot(const float* a, const float* b, size_t n);
float sum(const float* a, size_t n);
float sumsq(const float* a, size_t n);
void vexp(const float* a, float* out, size_t n);
void vsigmoid(const float* a, float* out, size_t n);
void vsilu(const float* a, float* out, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);
void adam_update(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1,
                 float bc2);
}  // namespace scalar

namespace avx2 {
void add(const float* a, const float* b, float* out, size_t n);
void sub(const float* a, const float* b, float* out, size_t n);
void mul(const float* a, const float* b, float* out, size_t n);
void scale(const float* a, float s, float* out, size_t n);
void axpy(float s, const float* x, float* y, size_t n);
float dot(const float* a, const float* b, size_t n);
float sum(const float* a, size_t n);
float sumsq(const float* a, size_t n);
void vexp(const float* a, float* out, size_t n);
void vsigmoid(const float* a, float* out, size_t n);
void vsilu(const float* a, float* out, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);
void adam_update(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1,
                 float bc2);
}  // namespace avx2

}  // namespace nvs::kern
