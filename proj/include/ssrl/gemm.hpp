#pragma once

#include <cstddef>

namespace ssrl {

// Small dense matrix kernels used by the convolution and dense layers.
// All matrices are row-major and the result is accumulated into C, which
// lets the backward passes add contributions in a fixed order. The loop
// nests keep the innermost axis contiguous so the compiler vectorizes them.

/// C[M x N] += A[M x K] * B[K x N]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* ci = c + i * n;
        const Real* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

/// C[M x N] += A[M x K] * B[N x K]^T   (rows of B are the dot-product partners)
template <typename Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * k;
        Real* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const Real* bj = b + j * k;
            Real acc = Real(0);
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

/// C[K x N] += A[M x K]^T * B[M x N]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * k;
        const Real* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            Real* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

} // namespace ssrl
