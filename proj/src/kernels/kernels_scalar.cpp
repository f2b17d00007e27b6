#include "camtraj/kernels.hpp"

#include <algorithm>

namespace camtraj::kern {

namespace {

void s_add(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_mul(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_axpy(float alpha, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(const float* a, float alpha, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

float s_dot(const float* a, const float* b, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float s_sum(const float* a, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

float s_max(const float* a, size_t n) {
    float m = a[0];
    for (size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t = {
        &ref::gemm_nn<float>, &ref::gemm_nt<float>, &ref::gemm_tn<float>,
        &s_add, &s_mul, &s_axpy, &s_scale, &s_dot, &s_sum, &s_max,
    };
    return t;
}

}  // namespace camtraj::kern
