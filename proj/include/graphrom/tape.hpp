#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "graphrom/rng.hpp"
#include "graphrom/tensor.hpp"

namespace graphrom {

/// Define-by-run reverse-mode tape over dense ops plus the gather/scatter
/// segment ops that message passing needs. Nodes are appended in evaluation
/// order, so creation order is a topological order and backward() is a single
/// reverse sweep. A tape is single-threaded; distinct tapes are independent.
class Tape {
    enum class Op {
        Input,
        Matmul,       // a[m x k] * b[k x n]
        AddBias,      // a[m x n] + row-broadcast b[1 x n]
        Silu,
        ConcatCols,   // [a | b]
        GatherRows,   // rows of a picked by index list
        SegmentSum,   // rows of a summed into segments by destination index
        Sub,          // a - b
        SumSquared,   // scalar sum of squares of a
        ScaleCols,    // a * col_scale + col_shift, constants (used to undo z-scoring)
        Axpby,        // alpha * a + beta * b, elementwise
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Tensor value;
        std::vector<std::int64_t> indices; // gather / segment destinations
        double alpha = 0.0, beta = 0.0;
        Tensor scale, shift; // ScaleCols constants
    };

public:
    int input(Tensor t) {
        Node n;
        n.op = Op::Input;
        n.value = std::move(t);
        return push(std::move(n));
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    int matmul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols() != B.rows())
            throw ShapeMismatch("matmul: " + A.shape_str() + " x " + B.shape_str());
        Node n;
        n.op = Op::Matmul;
        n.a = a;
        n.b = b;
        n.value = Tensor::zeros({A.rows(), B.cols()});
        kernels::mm_nn(A.data(), B.data(), n.value.data(), A.rows(), A.cols(), B.cols());
        return push(std::move(n));
    }

    int add_bias(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (B.numel() != A.cols())
            throw ShapeMismatch("add_bias: " + A.shape_str() + " + " + B.shape_str());
        Node n;
        n.op = Op::AddBias;
        n.a = a;
        n.b = b;
        n.value = A;
        const std::int64_t m = A.rows(), c = A.cols();
        for (std::int64_t i = 0; i < m; ++i)
            kernels::axpy(1.0, B.data(), n.value.row(i), c);
        return push(std::move(n));
    }

    int silu(int a) {
        Node n;
        n.op = Op::Silu;
        n.a = a;
        n.value = value(a);
        for (std::int64_t i = 0; i < n.value.numel(); ++i)
            n.value[i] = fastmath::silu(n.value[i]);
        return push(std::move(n));
    }

    int concat_cols(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rows() != B.rows())
            throw ShapeMismatch("concat_cols: " + A.shape_str() + " | " + B.shape_str());
        Node n;
        n.op = Op::ConcatCols;
        n.a = a;
        n.b = b;
        n.value = Tensor::zeros({A.rows(), A.cols() + B.cols()});
        const std::int64_t ca = A.cols(), cb = B.cols();
        for (std::int64_t i = 0; i < A.rows(); ++i) {
            std::memcpy(n.value.row(i), A.row(i), static_cast<std::size_t>(ca) * sizeof(double));
            std::memcpy(n.value.row(i) + ca, B.row(i), static_cast<std::size_t>(cb) * sizeof(double));
        }
        return push(std::move(n));
    }

    int gather_rows(int a, std::vector<std::int64_t> idx) {
        const Tensor& A = value(a);
        for (auto i : idx)
            if (i < 0 || i >= A.rows()) throw ShapeMismatch("gather_rows: index out of range");
        Node n;
        n.op = Op::GatherRows;
        n.a = a;
        n.value = Tensor::zeros({static_cast<std::int64_t>(idx.size()), A.cols()});
        const std::int64_t c = A.cols();
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::memcpy(n.value.row(static_cast<std::int64_t>(r)), A.row(idx[r]),
                        static_cast<std::size_t>(c) * sizeof(double));
        n.indices = std::move(idx);
        return push(std::move(n));
    }

    int segment_sum(int a, std::vector<std::int64_t> dest, std::int64_t n_segments) {
        const Tensor& A = value(a);
        if (static_cast<std::int64_t>(dest.size()) != A.rows())
            throw ShapeMismatch("segment_sum: one destination per row required");
        for (auto d : dest)
            if (d < 0 || d >= n_segments) throw ShapeMismatch("segment_sum: destination out of range");
        Node n;
        n.op = Op::SegmentSum;
        n.a = a;
        n.value = Tensor::zeros({n_segments, A.cols()});
        const std::int64_t c = A.cols();
        for (std::size_t r = 0; r < dest.size(); ++r)
            kernels::axpy(1.0, A.row(static_cast<std::int64_t>(r)), n.value.row(dest[r]), c);
        n.indices = std::move(dest);
        return push(std::move(n));
    }

    int sub(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ShapeMismatch("sub: " + A.shape_str() + " - " + B.shape_str());
        Node n;
        n.op = Op::Sub;
        n.a = a;
        n.b = b;
        n.value = A;
        for (std::int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= B[i];
        return push(std::move(n));
    }

    int sum_squared(int a) {
        const Tensor& A = value(a);
        Node n;
        n.op = Op::SumSquared;
        n.a = a;
        double s = 0.0;
        for (std::int64_t i = 0; i < A.numel(); ++i) s += A[i] * A[i];
        n.value = Tensor::scalar(s);
        return push(std::move(n));
    }

    int scale_cols(int a, Tensor col_scale, Tensor col_shift) {
        const Tensor& A = value(a);
        if (col_scale.numel() != A.cols() || col_shift.numel() != A.cols())
            throw ShapeMismatch("scale_cols: per-column constants must match width");
        Node n;
        n.op = Op::ScaleCols;
        n.a = a;
        n.value = A;
        const std::int64_t c = A.cols();
        for (std::int64_t i = 0; i < A.rows(); ++i) {
            double* r = n.value.row(i);
            for (std::int64_t j = 0; j < c; ++j) r[j] = r[j] * col_scale[j] + col_shift[j];
        }
        n.scale = std::move(col_scale);
        n.shift = std::move(col_shift);
        return push(std::move(n));
    }

    int axpby(double alpha, int a, double beta, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ShapeMismatch("axpby: shape mismatch");
        Node n;
        n.op = Op::Axpby;
        n.a = a;
        n.b = b;
        n.alpha = alpha;
        n.beta = beta;
        n.value = Tensor::zeros(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) n.value[i] = alpha * A[i] + beta * B[i];
        return push(std::move(n));
    }

    /// Reverse sweep from a scalar loss node. Returns one gradient tensor per
    /// requested node id; every node is visited exactly once, in reverse
    /// creation order.
    std::vector<Tensor> backward(int loss, const std::vector<int>& wrt) {
        if (!value(loss).is_scalar()) throw ShapeMismatch("backward: loss must be scalar");
        std::vector<Tensor> grads(nodes_.size());
        grads[static_cast<std::size_t>(loss)] = Tensor::scalar(1.0);

        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            Tensor& g = grads[static_cast<std::size_t>(i)];
            if (g.numel() == 0) continue;
            switch (n.op) {
                case Op::Input:
                    break;
                case Op::Matmul: {
                    const Tensor& A = value(n.a);
                    const Tensor& B = value(n.b);
                    Tensor& ga = grad_slot(grads, n.a);
                    Tensor& gb = grad_slot(grads, n.b);
                    // dA += g * B^T ; dB += A^T * g
                    kernels::mm_nt(g.data(), B.data(), ga.data(), A.rows(), B.cols(), B.rows());
                    kernels::mm_at(A.data(), g.data(), gb.data(), A.rows(), A.cols(), B.cols());
                    break;
                }
                case Op::AddBias: {
                    Tensor& ga = grad_slot(grads, n.a);
                    Tensor& gb = grad_slot(grads, n.b);
                    kernels::axpy(1.0, g.data(), ga.data(), ga.numel());
                    kernels::col_sums(g.data(), gb.data(), g.rows(), g.cols());
                    break;
                }
                case Op::Silu: {
                    const Tensor& A = value(n.a);
                    Tensor& ga = grad_slot(grads, n.a);
                    for (std::int64_t j = 0; j < A.numel(); ++j)
                        ga[j] += fastmath::silu_grad(A[j]) * g[j];
                    break;
                }
                case Op::ConcatCols: {
                    Tensor& ga = grad_slot(grads, n.a);
                    Tensor& gb = grad_slot(grads, n.b);
                    const std::int64_t ca = ga.cols(), cb = gb.cols();
                    for (std::int64_t r = 0; r < g.rows(); ++r) {
                        kernels::axpy(1.0, g.row(r), ga.row(r), ca);
                        kernels::axpy(1.0, g.row(r) + ca, gb.row(r), cb);
                    }
                    break;
                }
                case Op::GatherRows: {
                    Tensor& ga = grad_slot(grads, n.a);
                    const std::int64_t c = ga.cols();
                    for (std::size_t r = 0; r < n.indices.size(); ++r)
                        kernels::axpy(1.0, g.row(static_cast<std::int64_t>(r)),
                                      ga.row(n.indices[r]), c);
                    break;
                }
                case Op::SegmentSum: {
                    Tensor& ga = grad_slot(grads, n.a);
                    const std::int64_t c = ga.cols();
                    for (std::size_t r = 0; r < n.indices.size(); ++r)
                        kernels::axpy(1.0, g.row(n.indices[r]),
                                      ga.row(static_cast<std::int64_t>(r)), c);
                    break;
                }
                case Op::Sub: {
                    Tensor& ga = grad_slot(grads, n.a);
                    Tensor& gb = grad_slot(grads, n.b);
                    kernels::axpy(1.0, g.data(), ga.data(), ga.numel());
                    kernels::axpy(-1.0, g.data(), gb.data(), gb.numel());
                    break;
                }
                case Op::SumSquared: {
                    const Tensor& A = value(n.a);
                    Tensor& ga = grad_slot(grads, n.a);
                    kernels::axpy(2.0 * g[0], A.data(), ga.data(), ga.numel());
                    break;
                }
                case Op::ScaleCols: {
                    Tensor& ga = grad_slot(grads, n.a);
                    const std::int64_t c = ga.cols();
                    for (std::int64_t r = 0; r < g.rows(); ++r) {
                        double* gar = ga.row(r);
                        const double* gr = g.row(r);
                        for (std::int64_t j = 0; j < c; ++j) gar[j] += gr[j] * n.scale[j];
                    }
                    break;
                }
                case Op::Axpby: {
                    Tensor& ga = grad_slot(grads, n.a);
                    Tensor& gb = grad_slot(grads, n.b);
                    kernels::axpy(n.alpha, g.data(), ga.data(), ga.numel());
                    kernels::axpy(n.beta, g.data(), gb.data(), gb.numel());
                    break;
                }
            }
        }

        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (int id : wrt) {
            Tensor& g = grads[static_cast<std::size_t>(id)];
            if (g.numel() == 0) g = Tensor::zeros(value(id).shape());
            out.push_back(std::move(g));
        }
        return out;
    }

private:
    Tensor& grad_slot(std::vector<Tensor>& grads, int id) {
        Tensor& g = grads[static_cast<std::size_t>(id)];
        if (g.numel() == 0) g = Tensor::zeros(value(id).shape());
        return g;
    }

    int push(Node n) {
        assert(n.value.all_finite() && "non-finite value produced on tape");
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
};

/// Compares tape gradients of a scalar function against central finite
/// differences on a random subset of components (at least one per tensor).
/// Comparison uses the standard mixed form: the denominator is
/// max(|fd|, |analytic|, 1e-4 * gmax, 1e-6) with gmax the largest analytic
/// component, so entries that sit orders of magnitude below the dominant
/// gradient are held to a matching absolute tolerance instead of being
/// measured against finite-difference rounding noise.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
};

inline GradCheckResult grad_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::function<std::vector<Tensor>(const std::vector<Tensor>&)>& grad_f,
    std::vector<Tensor> params, double h, Rng& rng, double subset_fraction = 0.05) {
    const std::vector<Tensor> analytic = grad_f(params);
    double gmax = 0.0;
    for (const Tensor& g : analytic)
        for (std::int64_t i = 0; i < g.numel(); ++i) gmax = std::max(gmax, std::abs(g[i]));
    const double floor = std::max(1e-6, 1e-4 * gmax);

    GradCheckResult res;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const std::int64_t n = params[t].numel();
        std::int64_t picks = std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                                           static_cast<double>(n) * subset_fraction));
        for (std::int64_t p = 0; p < picks; ++p) {
            const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(n)));
            const double orig = params[t][i];
            params[t][i] = orig + h;
            const double fp = f(params);
            params[t][i] = orig - h;
            const double fm = f(params);
            params[t][i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[t][i];
            const double denom = std::max({std::abs(fd), std::abs(an), floor});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
            ++res.checked;
        }
    }
    return res;
}

} // namespace graphrom
