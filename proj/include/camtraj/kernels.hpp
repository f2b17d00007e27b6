#pragma once

#include <cstddef>

// Float32 arithmetic kernels behind a runtime-selected dispatch table.
// The scalar variants are the reference; the AVX2 variants must agree with
// them within floating-point reassociation tolerance (equivalence-tested).
// All matrices are packed row-major.

namespace camtraj::kern {

enum class Isa { Scalar, Avx2 };

// Active instruction set. Defaults to the best supported one; the
// CAMTRAJ_FORCE_SCALAR environment variable (any value) forces scalar.
Isa active_isa();
void force_isa(Isa isa);

struct KernelTable {
    // C = A(MxK) * B(KxN) [+ C if accumulate]
    void (*gemm_nn)(const float* a, const float* b, float* c, int m, int k, int n,
                    bool accumulate);
    // C = A(MxK) * B(NxK)^T
    void (*gemm_nt)(const float* a, const float* b, float* c, int m, int k, int n,
                    bool accumulate);
    // C = A(KxM)^T * B(KxN)
    void (*gemm_tn)(const float* a, const float* b, float* c, int m, int k, int n,
                    bool accumulate);

    void (*add)(const float* a, const float* b, float* out, size_t n);
    void (*mul)(const float* a, const float* b, float* out, size_t n);
    void (*axpy)(float alpha, const float* x, float* y, size_t n);
    void (*scale)(const float* a, float alpha, float* out, size_t n);
    float (*dot)(const float* a, const float* b, size_t n);
    float (*sum)(const float* a, size_t n);
    float (*max)(const float* a, size_t n);
};

// Table for the active ISA.
const KernelTable& table();

// Named tables, used directly by the equivalence tests.
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when unsupported at runtime

// Generic scalar reference, also instantiated for double (float64
// verification path of the autodiff module).
namespace ref {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        for (int p = 0; p < k; ++p) {
            T av = a[static_cast<size_t>(i) * k + p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            size_t idx = static_cast<size_t>(i) * n + j;
            c[idx] = accumulate ? c[idx] + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] = T(0);
    for (int p = 0; p < k; ++p) {
        const T* arow = a + static_cast<size_t>(p) * m;
        const T* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace ref

// Dispatching helpers used by the tensor layer: float goes through the
// runtime table, double through the scalar reference.
inline void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n,
                    bool acc) {
    table().gemm_nn(a, b, c, m, k, n, acc);
}
inline void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n,
                    bool acc) {
    table().gemm_nt(a, b, c, m, k, n, acc);
}
inline void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n,
                    bool acc) {
    table().gemm_tn(a, b, c, m, k, n, acc);
}
inline void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
                    bool acc) {
    ref::gemm_nn(a, b, c, m, k, n, acc);
}
inline void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
                    bool acc) {
    ref::gemm_nt(a, b, c, m, k, n, acc);
}
inline void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
                    bool acc) {
    ref::gemm_tn(a, b, c, m, k, n, acc);
}

inline void add(const float* a, const float* b, float* out, size_t n) {
    table().add(a, b, out, n);
}
inline void mul(const float* a, const float* b, float* out, size_t n) {
    table().mul(a, b, out, n);
}
inline void axpy(float alpha, const float* x, float* y, size_t n) {
    table().axpy(alpha, x, y, n);
}
inline void scale(const float* a, float alpha, float* out, size_t n) {
    table().scale(a, alpha, out, n);
}
inline float dot(const float* a, const float* b, size_t n) { return table().dot(a, b, n); }
inline float sum(const float* a, size_t n) { return table().sum(a, n); }
inline float max(const float* a, size_t n) { return table().max(a, n); }

inline void add(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
inline void mul(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
inline void axpy(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
inline void scale(const double* a, double alpha, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}
inline double dot(const double* a, const double* b, size_t n) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
inline double sum(const double* a, size_t n) {
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}
inline double max(const double* a, size_t n) {
    double m = a[0];
    for (size_t i = 1; i < n; ++i) m = m < a[i] ? a[i] : m;
    return m;
}

}  // namespace camtraj::kern
