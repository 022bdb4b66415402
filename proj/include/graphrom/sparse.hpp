#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphrom/errors.hpp"

namespace graphrom {

/// Compressed sparse row matrix with sorted, unique column indices per row.
struct CsrMatrix {
    std::int64_t n = 0;
    std::vector<std::int64_t> row_ptr;
    std::vector<std::int64_t> col_idx;
    std::vector<double> vals;

    void multiply(const double* x, double* y) const {
        for (std::int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::int64_t p = row_ptr[static_cast<std::size_t>(i)];
                 p < row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
                s += vals[static_cast<std::size_t>(p)] * x[col_idx[static_cast<std::size_t>(p)]];
            y[i] = s;
        }
    }

    std::vector<double> multiply(const std::vector<double>& x) const {
        std::vector<double> y(static_cast<std::size_t>(n));
        multiply(x.data(), y.data());
        return y;
    }

    double& entry(std::int64_t i, std::int64_t j) {
        for (std::int64_t p = row_ptr[static_cast<std::size_t>(i)];
             p < row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
            if (col_idx[static_cast<std::size_t>(p)] == j) return vals[static_cast<std::size_t>(p)];
        throw ShapeMismatch("CSR entry (" + std::to_string(i) + "," + std::to_string(j) +
                            ") not in sparsity pattern");
    }

    double sum_entries() const {
        double s = 0.0;
        for (double v : vals) s += v;
        return s;
    }
};

/// Builds a CSR skeleton from an adjacency list (diagonal always included);
/// values are filled by repeated scatter-assembly into the fixed pattern.
class CsrPattern {
public:
    CsrPattern() = default;

    explicit CsrPattern(std::vector<std::vector<std::int64_t>> adjacency) {
        mat_.n = static_cast<std::int64_t>(adjacency.size());
        mat_.row_ptr.assign(static_cast<std::size_t>(mat_.n) + 1, 0);
        for (std::int64_t i = 0; i < mat_.n; ++i) {
            auto& nbrs = adjacency[static_cast<std::size_t>(i)];
            nbrs.push_back(i);
            std::sort(nbrs.begin(), nbrs.end());
            nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
            mat_.row_ptr[static_cast<std::size_t>(i + 1)] =
                mat_.row_ptr[static_cast<std::size_t>(i)] + static_cast<std::int64_t>(nbrs.size());
            for (auto j : nbrs) mat_.col_idx.push_back(j);
        }
        mat_.vals.assign(mat_.col_idx.size(), 0.0);
    }

    CsrMatrix zeros_like() const {
        CsrMatrix m = mat_;
        std::fill(m.vals.begin(), m.vals.end(), 0.0);
        return m;
    }

    /// Position of entry (i, j) in the shared value array.
    std::int64_t slot(std::int64_t i, std::int64_t j) const {
        for (std::int64_t p = mat_.row_ptr[static_cast<std::size_t>(i)];
             p < mat_.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
            if (mat_.col_idx[static_cast<std::size_t>(p)] == j) return p;
        throw ShapeMismatch("entry outside CSR pattern");
    }

private:
    CsrMatrix mat_;
};

struct BicgstabResult {
    std::vector<double> x;
    int iterations = 0;
    double residual = 0.0;
};

/// Preconditioned BiCGSTAB with a diagonal (Jacobi) preconditioner.
/// Converges when ||r||_2 <= tol * ||b||_2; throws SolverDiverged otherwise.
inline BicgstabResult bicgstab(const CsrMatrix& A, const std::vector<double>& b,
                               const std::vector<double>& x0, double tol = 1e-10,
                               int max_iter = 5000) {
    const std::int64_t n = A.n;
    std::vector<double> diag_inv(static_cast<std::size_t>(n), 1.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = A.row_ptr[static_cast<std::size_t>(i)];
             p < A.row_ptr[static_cast<std::size_t>(i + 1)]; ++p)
            if (A.col_idx[static_cast<std::size_t>(p)] == i && A.vals[static_cast<std::size_t>(p)] != 0.0)
                diag_inv[static_cast<std::size_t>(i)] = 1.0 / A.vals[static_cast<std::size_t>(p)];

    auto dot = [n](const std::vector<double>& u, const std::vector<double>& v) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            s += u[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        return s;
    };
    auto norm = [&](const std::vector<double>& u) { return std::sqrt(dot(u, u)); };

    const double bnorm = norm(b);
    BicgstabResult res;
    res.x = x0;
    if (bnorm == 0.0) {
        res.x.assign(static_cast<std::size_t>(n), 0.0);
        return res;
    }

    std::vector<double> r(static_cast<std::size_t>(n));
    A.multiply(res.x.data(), r.data());
    for (std::int64_t i = 0; i < n; ++i)
        r[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] - r[static_cast<std::size_t>(i)];
    res.residual = norm(r) / bnorm;
    if (res.residual <= tol) return res; // warm start already converged

    std::vector<double> r0 = r, p(static_cast<std::size_t>(n), 0.0), v(static_cast<std::size_t>(n), 0.0);
    std::vector<double> phat(static_cast<std::size_t>(n)), shat(static_cast<std::size_t>(n)),
        t(static_cast<std::size_t>(n)), s(static_cast<std::size_t>(n));
    double rho_old = 1.0, alpha = 1.0, omega = 1.0;

    for (int it = 1; it <= max_iter; ++it) {
        const double rho = dot(r0, r);
        if (rho == 0.0) break;
        if (it == 1) {
            p = r;
        } else {
            const double beta = (rho / rho_old) * (alpha / omega);
            for (std::int64_t i = 0; i < n; ++i) {
                auto iu = static_cast<std::size_t>(i);
                p[iu] = r[iu] + beta * (p[iu] - omega * v[iu]);
            }
        }
        for (std::int64_t i = 0; i < n; ++i)
            phat[static_cast<std::size_t>(i)] =
                diag_inv[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)];
        A.multiply(phat.data(), v.data());
        alpha = rho / dot(r0, v);
        for (std::int64_t i = 0; i < n; ++i) {
            auto iu = static_cast<std::size_t>(i);
            s[iu] = r[iu] - alpha * v[iu];
        }
        if (norm(s) <= tol * bnorm) {
            for (std::int64_t i = 0; i < n; ++i) {
                auto iu = static_cast<std::size_t>(i);
                res.x[iu] += alpha * phat[iu];
            }
            res.iterations = it;
            res.residual = norm(s) / bnorm;
            return res;
        }
        for (std::int64_t i = 0; i < n; ++i)
            shat[static_cast<std::size_t>(i)] =
                diag_inv[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)];
        A.multiply(shat.data(), t.data());
        const double tt = dot(t, t);
        omega = tt == 0.0 ? 0.0 : dot(t, s) / tt;
        for (std::int64_t i = 0; i < n; ++i) {
            auto iu = static_cast<std::size_t>(i);
            res.x[iu] += alpha * phat[iu] + omega * shat[iu];
            r[iu] = s[iu] - omega * t[iu];
        }
        res.iterations = it;
        res.residual = norm(r) / bnorm;
        if (res.residual <= tol) return res;
        if (omega == 0.0) break;
        rho_old = rho;
    }
    throw SolverDiverged("BiCGSTAB: residual " + std::to_string(res.residual) + " after " +
                         std::to_string(res.iterations) + " iterations");
}

} // namespace graphrom
