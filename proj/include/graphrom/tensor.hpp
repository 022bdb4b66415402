#pragma once

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#if defined(__AVX512F__) && defined(__AVX512DQ__)
#include <immintrin.h>
#endif

#include "graphrom/errors.hpp"

namespace graphrom {

/// Dense row-major tensor of 64-bit floats. Value-semantic; 2-D in almost all
/// uses (rows x cols), with scalars represented as {1, 1}.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size()))
            throw ShapeMismatch("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return numel() == 1; }

    std::int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::int64_t cols() const {
        if (shape_.size() < 2) return shape_.size() == 1 ? 1 : 0;
        std::int64_t c = 1;
        for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
        return c;
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::int64_t r) { return data_.data() + r * cols(); }
    const double* row(std::int64_t r) const { return data_.data() + r * cols(); }

    double& at(std::int64_t r, std::int64_t c) { return data_[r * cols() + c]; }
    double at(std::int64_t r, std::int64_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw ShapeMismatch("negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Fast elementwise math. exp is approximated with a range-reduced degree-11
// polynomial (relative error below ~2e-14) so activation loops vectorize;
// libm exp is a scalar call and dominates runtime otherwise.
// ---------------------------------------------------------------------------
namespace fastmath {

inline double exp_approx(double x) {
    constexpr double kLog2e = 1.4426950408889634073599246810019;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kMagic = 6755399441055744.0; // 1.5 * 2^52, round-to-nearest

    const double xc = std::min(708.0, std::max(-708.0, x));
    const double kd = xc * kLog2e + kMagic;
    const double kf = kd - kMagic; // round-to-nearest integer value of xc*log2e
    const auto k = static_cast<std::int64_t>(kf);
    const double r = (xc - kf * kLn2Hi) - kf * kLn2Lo;

    // Taylor polynomial of exp on [-ln2/2, ln2/2].
    double p = 1.0 / 39916800.0;             // 1/11!
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    const std::uint64_t bits = static_cast<std::uint64_t>(1023 + k) << 52u;
    return p * std::bit_cast<double>(bits);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + exp_approx(-x)); }

/// SiLU: x * sigmoid(x).
inline double silu(double x) { return x * sigmoid(x); }

/// d/dx SiLU = sigma(x) * (1 + x * (1 - sigma(x))).
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

#if defined(__AVX512F__) && defined(__AVX512DQ__)
#define GRAPHROM_SILU_VEC 1
#endif

#ifdef GRAPHROM_SILU_VEC
namespace vec_detail {

inline __m512d exp512(__m512d x) {
    const __m512d log2e = _mm512_set1_pd(1.4426950408889634073599246810019);
    const __m512d ln2_hi = _mm512_set1_pd(6.93147180369123816490e-01);
    const __m512d ln2_lo = _mm512_set1_pd(1.90821492927058770002e-10);
    x = _mm512_min_pd(_mm512_set1_pd(708.0), _mm512_max_pd(_mm512_set1_pd(-708.0), x));
    const __m512d kf = _mm512_roundscale_pd(_mm512_mul_pd(x, log2e),
                                            _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m512d r = _mm512_fnmadd_pd(kf, ln2_hi, x);
    r = _mm512_fnmadd_pd(kf, ln2_lo, r);

    __m512d p = _mm512_set1_pd(1.0 / 39916800.0);
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 3628800.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 362880.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 40320.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 5040.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 720.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 120.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 24.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 6.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(0.5));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0));

    const __m512i k = _mm512_cvtpd_epi64(kf);
    const __m512i bits = _mm512_slli_epi64(_mm512_add_epi64(k, _mm512_set1_epi64(1023)), 52);
    return _mm512_mul_pd(p, _mm512_castsi512_pd(bits));
}

inline __m512d sigmoid512(__m512d x) {
    const __m512d one = _mm512_set1_pd(1.0);
    const __m512d e = exp512(_mm512_sub_pd(_mm512_setzero_pd(), x));
    return _mm512_div_pd(one, _mm512_add_pd(one, e));
}

} // namespace vec_detail
#endif

/// In one pass: sig[i] = sigmoid(z[i]), a[i] = z[i] * sig[i]. Saving the
/// sigmoid lets the backward pass evaluate the SiLU derivative as
/// sig + a * (1 - sig) with no exponentials.
inline void silu_array(const double* z, double* a, double* sig, std::int64_t n) {
    std::int64_t i = 0;
#ifdef GRAPHROM_SILU_VEC
    for (; i + 8 <= n; i += 8) {
        const __m512d zv = _mm512_loadu_pd(z + i);
        const __m512d sv = vec_detail::sigmoid512(zv);
        _mm512_storeu_pd(sig + i, sv);
        _mm512_storeu_pd(a + i, _mm512_mul_pd(zv, sv));
    }
#endif
    for (; i < n; ++i) {
        const double s = sigmoid(z[i]);
        sig[i] = s;
        a[i] = z[i] * s;
    }
}

/// dz[i] = (sig[i] + a[i] * (1 - sig[i])) * upstream[i], from saved forward
/// values (a = z * sig).
inline void silu_backward_array(const double* a, const double* sig, const double* upstream,
                                double* dz, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        dz[i] = (sig[i] + a[i] * (1.0 - sig[i])) * upstream[i];
}

} // namespace fastmath

// ---------------------------------------------------------------------------
// Matrix kernels, row-major. A 4-row by 32-column register-blocked inner loop
// carries the training workload; all variants accumulate over k in index
// order, so results do not depend on blocking or thread count.
// ---------------------------------------------------------------------------
namespace kernels {

namespace detail {

template <int W, bool Acc>
inline void micro_4xW(const double* a0, const double* a1, const double* a2, const double* a3,
                      const double* b, std::int64_t k, std::int64_t ldb,
                      double* c0, double* c1, double* c2, double* c3) {
    double acc0[W], acc1[W], acc2[W], acc3[W];
    if constexpr (Acc) {
        std::memcpy(acc0, c0, sizeof acc0);
        std::memcpy(acc1, c1, sizeof acc1);
        std::memcpy(acc2, c2, sizeof acc2);
        std::memcpy(acc3, c3, sizeof acc3);
    } else {
        std::memset(acc0, 0, sizeof acc0);
        std::memset(acc1, 0, sizeof acc1);
        std::memset(acc2, 0, sizeof acc2);
        std::memset(acc3, 0, sizeof acc3);
    }
    for (std::int64_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb;
        const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (int j = 0; j < W; ++j) {
            const double bj = bp[j];
            acc0[j] += v0 * bj;
            acc1[j] += v1 * bj;
            acc2[j] += v2 * bj;
            acc3[j] += v3 * bj;
        }
    }
    std::memcpy(c0, acc0, sizeof acc0);
    std::memcpy(c1, acc1, sizeof acc1);
    std::memcpy(c2, acc2, sizeof acc2);
    std::memcpy(c3, acc3, sizeof acc3);
}

template <int W, bool Acc>
inline void micro_1xW(const double* a, const double* b, std::int64_t k, std::int64_t ldb, double* c) {
    double acc[W];
    if constexpr (Acc)
        std::memcpy(acc, c, sizeof acc);
    else
        std::memset(acc, 0, sizeof acc);
    for (std::int64_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb;
        const double v = a[p];
        for (int j = 0; j < W; ++j) acc[j] += v * bp[j];
    }
    std::memcpy(c, acc, sizeof acc);
}

template <bool Acc>
inline void generic_tail(const double* A, const double* B, double* C,
                         std::int64_t m, std::int64_t k, std::int64_t n,
                         std::int64_t j0, std::int64_t j1) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        if constexpr (!Acc)
            for (std::int64_t j = j0; j < j1; ++j) c[j] = 0.0;
        for (std::int64_t p = 0; p < k; ++p) {
            const double v = a[p];
            const double* b = B + p * n;
            for (std::int64_t j = j0; j < j1; ++j) c[j] += v * b[j];
        }
    }
}

template <bool Acc>
inline void mm_nn_impl(const double* A, const double* B, double* C,
                       std::int64_t m, std::int64_t k, std::int64_t n) {
    std::int64_t j = 0;
    for (; j + 32 <= n; j += 32) {
        const double* Bj = B + j;
        double* Cj = C + j;
        std::int64_t i = 0;
        for (; i + 4 <= m; i += 4)
            micro_4xW<32, Acc>(A + i * k, A + (i + 1) * k, A + (i + 2) * k, A + (i + 3) * k,
                               Bj, k, n, Cj + i * n, Cj + (i + 1) * n, Cj + (i + 2) * n,
                               Cj + (i + 3) * n);
        for (; i < m; ++i)
            micro_1xW<32, Acc>(A + i * k, Bj, k, n, Cj + i * n);
    }
    if (j + 16 <= n) {
        const double* Bj = B + j;
        double* Cj = C + j;
        std::int64_t i = 0;
        for (; i + 4 <= m; i += 4)
            micro_4xW<16, Acc>(A + i * k, A + (i + 1) * k, A + (i + 2) * k, A + (i + 3) * k,
                               Bj, k, n, Cj + i * n, Cj + (i + 1) * n, Cj + (i + 2) * n,
                               Cj + (i + 3) * n);
        for (; i < m; ++i)
            micro_1xW<16, Acc>(A + i * k, Bj, k, n, Cj + i * n);
        j += 16;
    }
    if (j < n) generic_tail<Acc>(A, B, C, m, k, n, j, n);
}

} // namespace detail

/// C[m x n] += A[m x k] * B[k x n].
inline void mm_nn(const double* A, const double* B, double* C,
                  std::int64_t m, std::int64_t k, std::int64_t n) {
    detail::mm_nn_impl<true>(A, B, C, m, k, n);
}

/// C[m x n] = A[m x k] * B[k x n] (overwrite; saves the pre-zeroing pass).
inline void mm_nn_assign(const double* A, const double* B, double* C,
                         std::int64_t m, std::int64_t k, std::int64_t n) {
    detail::mm_nn_impl<false>(A, B, C, m, k, n);
}

namespace detail {

/// C tile of 4 x W held in registers across the whole row sweep; the row sum
/// per element runs in ascending order.
template <int W>
inline void at_micro_4xW(const double* A, const double* B, double* C,
                         std::int64_t m, std::int64_t n,
                         std::int64_t p0, std::int64_t j0, std::int64_t lda, std::int64_t ldb) {
    double acc0[W], acc1[W], acc2[W], acc3[W];
    double* c0 = C + p0 * n + j0;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    std::memcpy(acc0, c0, sizeof acc0);
    std::memcpy(acc1, c1, sizeof acc1);
    std::memcpy(acc2, c2, sizeof acc2);
    std::memcpy(acc3, c3, sizeof acc3);
    const double* a = A + p0;
    const double* b = B + j0;
    for (std::int64_t r = 0; r < m; ++r, a += lda, b += ldb) {
        const double v0 = a[0], v1 = a[1], v2 = a[2], v3 = a[3];
        for (int j = 0; j < W; ++j) {
            const double bj = b[j];
            acc0[j] += v0 * bj;
            acc1[j] += v1 * bj;
            acc2[j] += v2 * bj;
            acc3[j] += v3 * bj;
        }
    }
    std::memcpy(c0, acc0, sizeof acc0);
    std::memcpy(c1, acc1, sizeof acc1);
    std::memcpy(c2, acc2, sizeof acc2);
    std::memcpy(c3, acc3, sizeof acc3);
}

inline void at_generic(const double* A, const double* B, double* C,
                       std::int64_t m, std::int64_t k, std::int64_t n,
                       std::int64_t p_lo, std::int64_t j_lo, std::int64_t lda, std::int64_t ldb) {
    for (std::int64_t r = 0; r < m; ++r) {
        const double* a = A + r * lda;
        const double* b = B + r * ldb;
        for (std::int64_t p = p_lo; p < k; ++p) {
            double* c = C + p * n;
            const double v = a[p];
            for (std::int64_t j = j_lo; j < n; ++j) c[j] += v * b[j];
        }
    }
}

inline void mm_at_impl(const double* A, const double* B, double* C,
                       std::int64_t m, std::int64_t k, std::int64_t n, std::int64_t lda,
                       std::int64_t ldb) {
    std::int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
        std::int64_t j = 0;
        for (; j + 32 <= n; j += 32) at_micro_4xW<32>(A, B, C, m, n, p, j, lda, ldb);
        if (j + 16 <= n) {
            at_micro_4xW<16>(A, B, C, m, n, p, j, lda, ldb);
            j += 16;
        }
        if (j < n) // column remainder for these four C rows
            for (std::int64_t r = 0; r < m; ++r) {
                const double* a = A + r * lda + p;
                const double* b = B + r * ldb;
                for (int dp = 0; dp < 4; ++dp) {
                    double* c = C + (p + dp) * n;
                    for (std::int64_t jj = j; jj < n; ++jj) c[jj] += a[dp] * b[jj];
                }
            }
    }
    if (p < k) at_generic(A, B, C, m, k, n, p, 0, lda, ldb);
}

} // namespace detail

/// C[k x n] += A^T * B with A[m x k], B[m x n]. The C tile lives in registers
/// for the whole row sweep, so the update stays arithmetic-bound.
inline void mm_at(const double* A, const double* B, double* C,
                  std::int64_t m, std::int64_t k, std::int64_t n) {
    detail::mm_at_impl(A, B, C, m, k, n, k, n);
}

/// C[m x n] += A[m x k] * B^T with B[n x k]. B is transposed into thread-local
/// scratch once, then mm_nn runs; keeps the k-summation order identical.
inline void mm_nt(const double* A, const double* B, double* C,
                  std::int64_t m, std::int64_t k, std::int64_t n) {
    thread_local std::vector<double> scratch;
    scratch.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) scratch[p * n + i] = B[i * k + p];
    mm_nn(A, scratch.data(), C, m, k, n);
}

/// C[m x n] = A[m x k] * B^T (overwrite).
inline void mm_nt_assign(const double* A, const double* B, double* C,
                         std::int64_t m, std::int64_t k, std::int64_t n) {
    thread_local std::vector<double> scratch;
    scratch.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) scratch[p * n + i] = B[i * k + p];
    mm_nn_assign(A, scratch.data(), C, m, k, n);
}

/// mm_at with a row stride on B (ldb >= n), for column-slab operands.
inline void mm_at_strided(const double* A, const double* B, double* C,
                          std::int64_t m, std::int64_t k, std::int64_t n, std::int64_t ldb) {
    detail::mm_at_impl(A, B, C, m, k, n, k, ldb);
}

/// out[n] += column sums of A[m x n], accumulated in row order.
inline void col_sums(const double* A, double* out, std::int64_t m, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + i * n;
        for (std::int64_t j = 0; j < n; ++j) out[j] += a[j];
    }
}

inline void axpy(double alpha, const double* x, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace kernels

} // namespace graphrom
