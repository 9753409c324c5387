#include <cmath>
#include <cstring>

#include "nvs/core/kernels.hpp"

namespace nvs::kern::scalar {

void add(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void axpy(float s, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

float dot(const float* a, const float* b, size_t n) {
    float acc = 0.f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float sum(const float* a, size_t n) {
    float acc = 0.f;
    for (size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

float sumsq(const float* a, size_t n) {
    float acc = 0.f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

void vexp(const float* a, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

void vsigmoid(const float* a, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = 1.f / (1.f + std::exp(-a[i]));
}

void vsilu(const float* a, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] / (1.f + std::exp(-a[i]));
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<size_t>(i) * ldc;
        if (beta == 0.f) {
            std::memset(crow, 0, sizeof(float) * n);
        } else if (beta != 1.f) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (int p = 0; p < k; ++p) {
            const float av = trans_a ? a[static_cast<size_t>(p) * lda + i]
                                     : a[static_cast<size_t>(i) * lda + p];
            const float s = alpha * av;
            if (s == 0.f) continue;
            const float* brow = trans_b ? nullptr : b + static_cast<size_t>(p) * ldb;
            if (!trans_b) {
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            } else {
                for (int j = 0; j < n; ++j)
                    crow[j] += s * b[static_cast<size_t>(j) * ldb + p];
            }
        }
    }
}

void adam_update(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1,
                 float bc2) {
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.f - beta2) * g[i] * g[i];
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace nvs::kern::scalar
