// AVX2 + FMA variants. Built only on x86-64 (see CMakeLists); other
// architectures fall back to the scalar table at runtime.

#include "camtraj/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>

namespace camtraj::kern {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

// c_row += a_scalar * b_row, the shared inner kernel of gemm_nn / gemm_tn.
inline void fma_row(float av, const float* brow, float* crow, int n) {
    __m256 va = _mm256_set1_ps(av);
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
    }
    for (; j < n; ++j) crow[j] += av * brow[j];
}

void v_gemm_nn(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0f);
        const float* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p)
            fma_row(arow[p], b + static_cast<size_t>(p) * n, crow, n);
    }
}

void v_gemm_nt(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<size_t>(j) * k;
            __m256 vacc = _mm256_setzero_ps();
            int p = 0;
            for (; p + 8 <= k; p += 8)
                vacc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p),
                                       _mm256_loadu_ps(brow + p), vacc);
            float acc = hsum(vacc);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            size_t idx = static_cast<size_t>(i) * n + j;
            c[idx] = accumulate ? c[idx] + acc : acc;
        }
    }
}

void v_gemm_tn(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate) {
    if (!accumulate)
        std::fill(c, c + static_cast<size_t>(m) * n, 0.0f);
    for (int p = 0; p < k; ++p) {
        const float* arow = a + static_cast<size_t>(p) * m;
        const float* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i)
            fma_row(arow[i], brow, c + static_cast<size_t>(i) * n, n);
    }
}

void v_add(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i,
                         _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_mul(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i,
                         _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_axpy(float alpha, const float* x, float* y, size_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(const float* a, float alpha, float* out, size_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), va));
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

float v_dot(const float* a, const float* b, size_t n) {
    __m256 vacc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        vacc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), vacc);
    float acc = hsum(vacc);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float v_sum(const float* a, size_t n) {
    __m256 vacc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) vacc = _mm256_add_ps(vacc, _mm256_loadu_ps(a + i));
    float acc = hsum(vacc);
    for (; i < n; ++i) acc += a[i];
    return acc;
}

float v_max(const float* a, size_t n) {
    float m = a[0];
    size_t i = 0;
    if (n >= 8) {
        __m256 vm = _mm256_loadu_ps(a);
        for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(a + i));
        alignas(32) float lanes[8];
        _mm256_store_ps(lanes, vm);
        for (float l : lanes) m = std::max(m, l);
    }
    for (; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

const KernelTable avx2 = {
    &v_gemm_nn, &v_gemm_nt, &v_gemm_tn,
    &v_add, &v_mul, &v_axpy, &v_scale, &v_dot, &v_sum, &v_max,
};

}  // namespace

const KernelTable* avx2_table() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") ? &avx2
                                                                           : nullptr;
}

}  // namespace camtraj::kern

#else

namespace camtraj::kern {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace camtraj::kern

#endif
